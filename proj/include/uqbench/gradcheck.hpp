#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqbench/train.hpp"

namespace uq::nn {

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Checks one isolated layer: analytic input/parameter gradients of a fixed
// linear functional of the output against central finite differences, with
// identical mask replay for stochastic kinds.
double gradcheck_layer(Layer& layer, const Tensor& input, std::uint64_t rng_seed, Mode mode = Mode::kTrain);

// Whole-model check: worst relative error over every trainable parameter.
double grad_check_model(Model& model, const Tensor& batch, const std::vector<int>* labels,
                        const Tensor* targets, LossKind loss, std::uint64_t rng_seed);

// One entry per layer kind and one per loss. inject_error flips a gradient
// on purpose (negative control for the CLI exit path).
std::vector<GradCheckItem> gradcheck_battery(std::uint64_t seed, bool inject_error = false);

}  // namespace uq::nn
