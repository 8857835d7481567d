#include "uqbench/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uqbench/losses.hpp"

namespace uq::nn {

LossKind resolve_loss(LossKind requested, OutputKind output) {
  if (requested != LossKind::kAuto) return requested;
  switch (output) {
    case OutputKind::kSoftmaxProbs: return LossKind::kCategoricalCe;
    case OutputKind::kRbfKernels: return LossKind::kBinaryCe;
    case OutputKind::kRegressionMean: return LossKind::kMse;
    case OutputKind::kRegressionMeanVar: return LossKind::kGaussianNll;
  }
  throw std::logic_error("resolve_loss: unknown output kind");
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    out.at(n, static_cast<std::size_t>(label)) = 1.0;
  }
  return out;
}

double model_loss(Model& model, const Tensor& batch, const std::vector<int>* labels,
                  const Tensor* targets, LossKind loss, Mode mode, RngStream* rng, bool backward) {
  loss = resolve_loss(loss, model.output_kind());
  const Tensor out = model.forward(batch, mode, rng);
  switch (loss) {
    case LossKind::kCategoricalCe: {
      if (labels == nullptr) throw std::invalid_argument("model_loss: categorical CE needs labels");
      LossGrad lg = categorical_cross_entropy(out, *labels);
      if (backward) model.backward_from_logits(lg.grad);
      return lg.loss;
    }
    case LossKind::kBinaryCe: {
      if (labels == nullptr) throw std::invalid_argument("model_loss: binary CE needs labels");
      LossGrad lg = binary_cross_entropy(out, one_hot(*labels, out.dim(1)));
      if (backward) model.backward(lg.grad);
      return lg.loss;
    }
    case LossKind::kMse: {
      if (targets == nullptr) throw std::invalid_argument("model_loss: MSE needs targets");
      LossGrad lg = mean_squared_error(out, *targets);
      if (backward) model.backward(lg.grad);
      return lg.loss;
    }
    case LossKind::kGaussianNll: {
      if (targets == nullptr) throw std::invalid_argument("model_loss: Gaussian NLL needs targets");
      if (out.rank() != 2 || out.dim(1) != 2) {
        throw std::runtime_error("model_loss: Gaussian NLL expects a (batch, 2) mean/variance output");
      }
      const std::size_t n = out.dim(0);
      Tensor mean({n, 1});
      Tensor variance({n, 1});
      for (std::size_t i = 0; i < n; ++i) {
        mean[i] = out.at(i, 0);
        variance[i] = out.at(i, 1);
      }
      GaussianNllGrad lg = gaussian_nll(mean, variance, *targets);
      if (backward) {
        Tensor grad({n, 2});
        for (std::size_t i = 0; i < n; ++i) {
          grad.at(i, 0) = lg.grad_mean[i];
          grad.at(i, 1) = lg.grad_variance[i];
        }
        model.backward(grad);
      }
      return lg.loss;
    }
    case LossKind::kAuto: break;
  }
  throw std::logic_error("model_loss: unresolved loss kind");
}

void train(Model& model, const data::LabeledDataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  data.validate();
  const LossKind loss = resolve_loss(cfg.loss, model.output_kind());
  RngStream stream(cfg.seed);
  Adam opt(cfg.adam);
  const std::vector<Param*> params = model.trainable();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> chunk;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    fisher_yates_shuffle(order, stream);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      chunk.assign(order.begin() + start, order.begin() + end);
      const Tensor xb = data.gather(chunk);
      double batch_loss;
      if (data.regression()) {
        const Tensor yb = data.gather_targets(chunk);
        batch_loss = model_loss(model, xb, nullptr, &yb, loss, Mode::kTrain, &stream, true);
      } else {
        std::vector<int> lb(chunk.size());
        for (std::size_t i = 0; i < chunk.size(); ++i) lb[i] = data.labels[chunk[i]];
        batch_loss = model_loss(model, xb, &lb, nullptr, loss, Mode::kTrain, &stream, true);
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      }
      opt.step(params);
    }
  }
}

}  // namespace uq::nn
