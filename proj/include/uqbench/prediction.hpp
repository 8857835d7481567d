#pragma once

#include <optional>
#include <vector>

#include "uqbench/tensor.hpp"

namespace uq::methods {

// Aggregated predictions for one batch. `probs` rows always sum to 1.
// `confidence`/`raw_score` are filled by the gradient method only;
// `max_kernel` carries the distance-based confidence of the RBF head
// (unnormalized max kernel), which replaces max-probability metrics there.
struct PredictionSet {
  Tensor probs;  // (n, classes)
  std::optional<std::vector<double>> confidence;  // gradient method, in [0,1]
  std::optional<std::vector<double>> raw_score;   // gradient method, g >= 0 scale-free
  std::optional<std::vector<double>> max_kernel;  // RBF head only

  std::size_t size() const { return probs.empty() ? 0 : probs.dim(0); }
  std::size_t classes() const { return probs.dim(1); }

  int predicted_label(std::size_t row) const;

  // Per-sample score used by max-probability metrics: gradient confidence
  // when present, otherwise the max kernel, otherwise the row maximum.
  double maxprob_score(std::size_t row) const;

  // Per-sample predictive entropy of the probability row.
  bool has_entropy() const { return !confidence.has_value(); }
};

}  // namespace uq::methods
