#pragma once

#include <vector>

#include "uqbench/tensor.hpp"

namespace uq::nn {

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

// Mean over the batch of -log p[label]. `probs` must be softmax outputs; the
// returned gradient is taken with respect to the pre-softmax logits, i.e.
// (p - onehot) / batch_size.
LossGrad categorical_cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Mean over batch and classes of -[t log o + (1-t) log(1-o)]. The gradient is
// with respect to the outputs.
LossGrad binary_cross_entropy(const Tensor& outputs, const Tensor& onehot_targets);

struct GaussianNllGrad {
  double loss = 0.0;
  Tensor grad_mean;
  Tensor grad_variance;
};

// 0.5 / N * sum_i (log var_i + (mean_i - y_i)^2 / var_i); variance must be
// strictly positive.
GaussianNllGrad gaussian_nll(const Tensor& mean, const Tensor& variance, const Tensor& targets);

// Mean over all elements of (pred - y)^2.
LossGrad mean_squared_error(const Tensor& preds, const Tensor& targets);

}  // namespace uq::nn
