#include "uqbench/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uq::nn {

namespace {
constexpr double kLogClamp = 1e-12;
}

LossGrad categorical_cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2) {
    throw std::invalid_argument("categorical_cross_entropy: probs must be (batch, classes), got " +
                                probs.shape_str());
  }
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  if (labels.size() != batch) {
    throw std::invalid_argument("categorical_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(batch));
  }
  LossGrad out;
  out.grad = Tensor(probs.shape());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("categorical_cross_entropy: label " + std::to_string(label) +
                              " out of range for " + std::to_string(classes) + " classes");
    }
    out.loss -= std::log(std::max(probs.at(n, static_cast<std::size_t>(label)), kLogClamp));
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = (static_cast<std::size_t>(label) == c) ? 1.0 : 0.0;
      out.grad.at(n, c) = (probs.at(n, c) - onehot) * inv_batch;
    }
  }
  out.loss *= inv_batch;
  return out;
}

LossGrad binary_cross_entropy(const Tensor& outputs, const Tensor& onehot_targets) {
  if (!outputs.same_shape(onehot_targets)) {
    throw std::invalid_argument("binary_cross_entropy: outputs " + outputs.shape_str() +
                                " vs targets " + onehot_targets.shape_str());
  }
  constexpr double kTol = 1e-9;
  constexpr double kEps = 1e-7;
  LossGrad out;
  out.grad = Tensor(outputs.shape());
  const double inv_n = 1.0 / static_cast<double>(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double raw = outputs[i];
    if (raw < -kTol || raw > 1.0 + kTol) {
      throw std::invalid_argument("binary_cross_entropy: output " + std::to_string(raw) +
                                  " outside (0, 1)");
    }
    const double o = std::min(std::max(raw, kEps), 1.0 - kEps);
    const double t = onehot_targets[i];
    out.loss -= t * std::log(o) + (1.0 - t) * std::log(1.0 - o);
    out.grad[i] = (-t / o + (1.0 - t) / (1.0 - o)) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

GaussianNllGrad gaussian_nll(const Tensor& mean, const Tensor& variance, const Tensor& targets) {
  if (mean.size() != variance.size() || mean.size() != targets.size()) {
    throw std::invalid_argument("gaussian_nll: mean/variance/target sizes differ");
  }
  GaussianNllGrad out;
  out.grad_mean = Tensor(mean.shape());
  out.grad_variance = Tensor(variance.shape());
  const double inv_n = 1.0 / static_cast<double>(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double var = variance[i];
    if (!(var > 0.0)) {
      throw std::invalid_argument("gaussian_nll: variance must be strictly positive, got " +
                                  std::to_string(var));
    }
    const double resid = mean[i] - targets[i];
    out.loss += 0.5 * (std::log(var) + resid * resid / var);
    out.grad_mean[i] = resid / var * inv_n;
    out.grad_variance[i] = 0.5 * (1.0 / var - resid * resid / (var * var)) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

LossGrad mean_squared_error(const Tensor& preds, const Tensor& targets) {
  if (preds.size() != targets.size()) {
    throw std::invalid_argument("mean_squared_error: prediction/target sizes differ");
  }
  LossGrad out;
  out.grad = Tensor(preds.shape());
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

}  // namespace uq::nn
