#pragma once

#include <cstdint>
#include <vector>

#include "uqbench/datasets.hpp"
#include "uqbench/model.hpp"
#include "uqbench/optimizer.hpp"

namespace uq::nn {

enum class LossKind { kAuto, kCategoricalCe, kBinaryCe, kGaussianNll, kMse };

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  AdamConfig adam;
  LossKind loss = LossKind::kAuto;
  std::uint64_t seed = 0;
};

LossKind resolve_loss(LossKind requested, OutputKind output);

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

// Runs the model's loss on one batch; when backward is set, gradients are
// propagated into the model's parameter buffers.
double model_loss(Model& model, const Tensor& batch, const std::vector<int>* labels,
                  const Tensor* targets, LossKind loss, Mode mode, RngStream* rng, bool backward);

// Mini-batch training with per-epoch Fisher-Yates shuffling. Deterministic
// given (cfg.seed, data, cfg); epochs = 0 leaves the weights untouched.
void train(Model& model, const data::LabeledDataset& data, const TrainConfig& cfg);

}  // namespace uq::nn
