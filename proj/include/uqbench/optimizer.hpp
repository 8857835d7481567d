#pragma once

#include <cstddef>
#include <vector>

#include "uqbench/layers.hpp"

namespace uq::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Bias-corrected Adam. Moment buffers are keyed by position in the parameter
// list, which must stay stable across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Param*>& params);

  std::size_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace uq::nn
