#include "uqbench/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "uqbench/losses.hpp"

namespace uq::nn {

namespace {

constexpr double kStep = 1e-5;

double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Fixed pseudo-random linear functional J(y) = sum_i w_i y_i, which makes the
// upstream gradient simply w.
Tensor functional_weights(const std::vector<std::size_t>& shape, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor w(shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return w;
}

double functional_value(const Tensor& y, const Tensor& w) {
  double j = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) j += y[i] * w[i];
  return j;
}

}  // namespace

double gradcheck_layer(Layer& layer, const Tensor& input, std::uint64_t rng_seed, Mode mode) {
  RngStream rng(rng_seed);
  Tensor x = input;
  Tensor y = layer.forward(x, mode, &rng);
  const Tensor w = functional_weights(y.shape(), rng_seed ^ 0x5eedULL);
  const Tensor dx = layer.backward(w);

  std::vector<Param*> params = layer.params();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  auto eval = [&](const Tensor& probe) {
    RngStream replay(rng_seed);
    Tensor out = layer.forward(probe, mode, &replay);
    return functional_value(out, w);
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kStep;
    const double plus = eval(x);
    x[i] = keep - kStep;
    const double minus = eval(x);
    x[i] = keep;
    worst = std::max(worst, rel_err(dx[i], (plus - minus) / (2.0 * kStep)));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params[p]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + kStep;
      const double plus = eval(x);
      value[i] = keep - kStep;
      const double minus = eval(x);
      value[i] = keep;
      worst = std::max(worst, rel_err(analytic[p][i], (plus - minus) / (2.0 * kStep)));
    }
  }
  return worst;
}

double grad_check_model(Model& model, const Tensor& batch, const std::vector<int>* labels,
                        const Tensor* targets, LossKind loss, std::uint64_t rng_seed) {
  std::size_t total = 0;
  for (Param* p : model.trainable()) total += p->value.size();
  if (total >= 10000) {
    throw std::invalid_argument("grad_check_model: model too large (" + std::to_string(total) +
                                " parameters, limit 10000)");
  }

  RngStream rng(rng_seed);
  model_loss(model, batch, labels, targets, loss, Mode::kTrain, &rng, true);
  std::vector<Param*> params = model.trainable();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  auto eval = [&] {
    RngStream replay(rng_seed);
    return model_loss(model, batch, labels, targets, loss, Mode::kTrain, &replay, false);
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params[p]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + kStep;
      const double plus = eval();
      value[i] = keep - kStep;
      const double minus = eval();
      value[i] = keep;
      worst = std::max(worst, rel_err(analytic[p][i], (plus - minus) / (2.0 * kStep)));
    }
  }
  return worst;
}

namespace {

Tensor random_input(const std::vector<std::size_t>& shape, RngStream& rng, double lo = -1.0,
                    double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double check_loss_fd(const char* which, RngStream& rng) {
  constexpr std::size_t batch = 4, classes = 3;
  double worst = 0.0;
  if (std::string(which) == "categorical_ce") {
    // FD on the pre-softmax logits exercises the fused (p - onehot)/B form.
    Tensor logits = random_input({batch, classes}, rng, -2.0, 2.0);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_index(classes));
    SoftmaxLayer softmax;
    Tensor probs = softmax.forward(logits, Mode::kEval, nullptr);
    const Tensor analytic = categorical_cross_entropy(probs, labels).grad;
    auto eval = [&](const Tensor& z) {
      SoftmaxLayer s;
      return categorical_cross_entropy(s.forward(z, Mode::kEval, nullptr), labels).loss;
    };
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double keep = logits[i];
      logits[i] = keep + kStep;
      const double plus = eval(logits);
      logits[i] = keep - kStep;
      const double minus = eval(logits);
      logits[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (plus - minus) / (2.0 * kStep)));
    }
  } else if (std::string(which) == "binary_ce") {
    Tensor outputs = random_input({batch, classes}, rng, 0.05, 0.95);
    Tensor targets({batch, classes});
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const Tensor analytic = binary_cross_entropy(outputs, targets).grad;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const double keep = outputs[i];
      outputs[i] = keep + kStep;
      const double plus = binary_cross_entropy(outputs, targets).loss;
      outputs[i] = keep - kStep;
      const double minus = binary_cross_entropy(outputs, targets).loss;
      outputs[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (plus - minus) / (2.0 * kStep)));
    }
  } else if (std::string(which) == "mse") {
    Tensor preds = random_input({batch, 1}, rng);
    Tensor targets = random_input({batch, 1}, rng);
    const Tensor analytic = mean_squared_error(preds, targets).grad;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double keep = preds[i];
      preds[i] = keep + kStep;
      const double plus = mean_squared_error(preds, targets).loss;
      preds[i] = keep - kStep;
      const double minus = mean_squared_error(preds, targets).loss;
      preds[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (plus - minus) / (2.0 * kStep)));
    }
  } else {  // gaussian_nll
    Tensor mean = random_input({batch, 1}, rng);
    Tensor variance = random_input({batch, 1}, rng, 0.5, 2.0);
    Tensor targets = random_input({batch, 1}, rng);
    const GaussianNllGrad g = gaussian_nll(mean, variance, targets);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double keep = mean[i];
      mean[i] = keep + kStep;
      const double plus = gaussian_nll(mean, variance, targets).loss;
      mean[i] = keep - kStep;
      const double minus = gaussian_nll(mean, variance, targets).loss;
      mean[i] = keep;
      worst = std::max(worst, rel_err(g.grad_mean[i], (plus - minus) / (2.0 * kStep)));
    }
    for (std::size_t i = 0; i < variance.size(); ++i) {
      const double keep = variance[i];
      variance[i] = keep + kStep;
      const double plus = gaussian_nll(mean, variance, targets).loss;
      variance[i] = keep - kStep;
      const double minus = gaussian_nll(mean, variance, targets).loss;
      variance[i] = keep;
      worst = std::max(worst, rel_err(g.grad_variance[i], (plus - minus) / (2.0 * kStep)));
    }
  }
  return worst;
}

}  // namespace

std::vector<GradCheckItem> gradcheck_battery(std::uint64_t seed, bool inject_error) {
  std::vector<GradCheckItem> items;
  RngStream rng(seed);
  RngStream init(derive_seed(seed, 1));

  {
    DenseLayer layer("g.dense", 6, 5, init);
    items.push_back({"dense", gradcheck_layer(layer, random_input({4, 6}, rng), seed)});
  }
  {
    Conv3x3Layer layer("g.conv", 2, 3, init);
    items.push_back({"conv2d_3x3", gradcheck_layer(layer, random_input({2, 2, 6, 6}, rng), seed)});
  }
  {
    MaxPool2x2Layer layer;
    items.push_back({"maxpool_2x2", gradcheck_layer(layer, random_input({2, 2, 6, 6}, rng), seed)});
  }
  {
    BatchNormLayer layer("g.bn", 3);
    // shift gamma/beta off their init so the check is not trivial
    for (std::size_t i = 0; i < 3; ++i) {
      layer.gamma.value[i] = rng.uniform(0.5, 1.5);
      layer.beta.value[i] = rng.uniform(-0.5, 0.5);
    }
    items.push_back({"batchnorm", gradcheck_layer(layer, random_input({4, 3, 5, 5}, rng), seed)});
  }
  {
    ReluLayer layer;
    Tensor x = random_input({4, 7}, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x[i]) < 1e-3) x[i] = 0.1;  // keep clear of the kink
    }
    items.push_back({"relu", gradcheck_layer(layer, x, seed)});
  }
  {
    SoftmaxLayer layer;
    items.push_back({"softmax", gradcheck_layer(layer, random_input({4, 5}, rng, -2.0, 2.0), seed)});
  }
  {
    SoftplusLayer layer;
    items.push_back({"softplus", gradcheck_layer(layer, random_input({4, 7}, rng, -3.0, 3.0), seed)});
  }
  {
    DropoutLayer layer(0.25);
    items.push_back({"dropout", gradcheck_layer(layer, random_input({4, 8}, rng), seed)});
  }
  {
    DropConnectLayer layer("g.dc", 6, 5, 0.25, init);
    items.push_back({"dropconnect", gradcheck_layer(layer, random_input({4, 6}, rng), seed)});
  }
  {
    FlipoutDenseLayer layer("g.flip", 6, 5, init);
    items.push_back({"flipout_dense", gradcheck_layer(layer, random_input({4, 6}, rng), seed)});
  }
  {
    RbfOutputLayer layer("g.rbf", 6, 3, 4, 0.1, init);
    items.push_back({"rbf_output", gradcheck_layer(layer, random_input({4, 6}, rng), seed)});
  }

  for (const char* loss : {"categorical_ce", "binary_ce", "mse", "gaussian_nll"}) {
    items.push_back({loss, check_loss_fd(loss, rng)});
  }

  if (inject_error && !items.empty()) {
    items.front().max_rel_err += 1.0;
  }
  return items;
}

}  // namespace uq::nn
