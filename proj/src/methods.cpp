#include "uqbench/methods.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uqbench/losses.hpp"

namespace uq::methods {

namespace {
constexpr std::size_t kPredictChunk = 128;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kDropout: return "dropout";
    case Method::kDropConnect: return "dropconnect";
    case Method::kDeepEnsemble: return "deepensemble";
    case Method::kDuq: return "duq";
    case Method::kFlipout: return "flipout";
    case Method::kGradient: return "gradient";
  }
  return "?";
}

const char* aggregator_name(GradAggregator a) {
  switch (a) {
    case GradAggregator::kL1: return "l1_norm";
    case GradAggregator::kL2: return "l2_norm";
    case GradAggregator::kMean: return "mean";
    case GradAggregator::kStd: return "std";
    case GradAggregator::kMin: return "min";
    case GradAggregator::kMax: return "max";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "baseline" || name == "bl") return Method::kBaseline;
  if (name == "dropout" || name == "do") return Method::kDropout;
  if (name == "dropconnect" || name == "dc") return Method::kDropConnect;
  if (name == "deepensemble" || name == "de" || name == "ensemble") return Method::kDeepEnsemble;
  if (name == "duq") return Method::kDuq;
  if (name == "flipout" || name == "vi") return Method::kFlipout;
  if (name == "gradient" || name == "gd") return Method::kGradient;
  throw std::invalid_argument("unknown method '" + name + "'");
}

GradAggregator parse_aggregator(const std::string& name) {
  if (name == "l1_norm" || name == "l1") return GradAggregator::kL1;
  if (name == "l2_norm" || name == "l2") return GradAggregator::kL2;
  if (name == "mean") return GradAggregator::kMean;
  if (name == "std") return GradAggregator::kStd;
  if (name == "min") return GradAggregator::kMin;
  if (name == "max") return GradAggregator::kMax;
  throw std::invalid_argument("unknown gradient aggregator '" + name + "'");
}

void MethodConfig::validate() const {
  if (mc_samples < 1) throw std::invalid_argument("MethodConfig: mc_samples must be >= 1");
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw std::invalid_argument("MethodConfig: drop_prob must be in [0, 1)");
  }
  if (ensemble_size < 1) throw std::invalid_argument("MethodConfig: ensemble_size must be >= 1");
  if (duq.length_scale <= 0.0) throw std::invalid_argument("MethodConfig: length scale must be > 0");
}

const char* backbone_name(Backbone b) {
  switch (b) {
    case Backbone::kMiniCnn: return "miniVGG";
    case Backbone::kMlp32: return "mlp";
  }
  return "?";
}

nn::ModelSpec make_classifier_spec(Backbone backbone, const std::vector<std::size_t>& input_shape,
                                   std::size_t classes, const MethodConfig& cfg) {
  cfg.validate();
  using nn::LayerKind;
  nn::ModelSpec spec;
  spec.input_shape = input_shape;
  spec.num_classes = classes;
  std::size_t penultimate = 0;
  if (backbone == Backbone::kMiniCnn) {
    if (input_shape.size() != 3) {
      throw std::invalid_argument("miniVGG backbone expects (channels, h, w) inputs, got " +
                                  shape_to_string(input_shape));
    }
    for (std::size_t filters : {std::size_t{64}, std::size_t{128}, std::size_t{128}}) {
      spec.trunk.push_back({.kind = LayerKind::kConv3x3, .units = filters});
      spec.trunk.push_back({.kind = LayerKind::kRelu});
      spec.trunk.push_back({.kind = LayerKind::kBatchNorm});
      spec.trunk.push_back({.kind = LayerKind::kMaxPool2x2});
    }
    spec.trunk.push_back({.kind = LayerKind::kDense, .units = 256});
    spec.trunk.push_back({.kind = LayerKind::kRelu});
    penultimate = 256;
  } else {
    spec.trunk.push_back({.kind = LayerKind::kDense, .units = 32});
    spec.trunk.push_back({.kind = LayerKind::kRelu});
    spec.trunk.push_back({.kind = LayerKind::kDense, .units = 32});
    spec.trunk.push_back({.kind = LayerKind::kRelu});
    penultimate = 32;
  }
  switch (cfg.method) {
    case Method::kBaseline:
    case Method::kDeepEnsemble:
    case Method::kGradient:
      spec.trunk.push_back({.kind = LayerKind::kDense, .units = classes});
      spec.trunk.push_back({.kind = LayerKind::kSoftmax});
      break;
    case Method::kDropout:
      spec.trunk.push_back({.kind = LayerKind::kDropout, .drop_prob = cfg.drop_prob});
      spec.trunk.push_back({.kind = LayerKind::kDense, .units = classes});
      spec.trunk.push_back({.kind = LayerKind::kSoftmax});
      break;
    case Method::kDropConnect:
      spec.trunk.push_back(
          {.kind = LayerKind::kDropConnect, .units = classes, .drop_prob = cfg.drop_prob});
      spec.trunk.push_back({.kind = LayerKind::kSoftmax});
      break;
    case Method::kFlipout:
      spec.trunk.push_back({.kind = LayerKind::kFlipoutDense, .units = classes});
      spec.trunk.push_back({.kind = LayerKind::kSoftmax});
      break;
    case Method::kDuq:
      spec.trunk.push_back({.kind = LayerKind::kRbfOutput,
                            .units = classes,
                            .centroid_dim = cfg.duq.centroid_dim ? cfg.duq.centroid_dim : penultimate,
                            .length_scale = cfg.duq.length_scale});
      spec.output = nn::OutputKind::kRbfKernels;
      break;
  }
  return spec;
}

namespace {

// Eval-mode forward over bounded chunks; keeps big sets out of one giant
// activation allocation.
Tensor forward_chunked(nn::Model& model, const Tensor& batch, RngStream* rng) {
  const std::size_t n = batch.dim(0);
  const std::size_t stride = batch.size() / n;
  Tensor probs;
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t end = std::min(start + kPredictChunk, n);
    std::vector<std::size_t> shape = batch.shape();
    shape[0] = end - start;
    Tensor chunk(shape, std::vector<double>(batch.data() + start * stride, batch.data() + end * stride));
    const Tensor out = model.forward(chunk, nn::Mode::kEval, rng);
    if (probs.empty()) {
      std::vector<std::size_t> out_shape = out.shape();
      out_shape[0] = n;
      probs = Tensor(out_shape);
    }
    std::copy(out.data(), out.data() + out.size(), probs.data() + start * out.dim(1));
  }
  return probs;
}

}  // namespace

int PredictionSet::predicted_label(std::size_t row) const {
  const std::size_t c = classes();
  const double* p = probs.data() + row * c;
  std::size_t arg = 0;
  for (std::size_t i = 1; i < c; ++i) {
    if (p[i] > p[arg]) arg = i;
  }
  return static_cast<int>(arg);
}

double PredictionSet::maxprob_score(std::size_t row) const {
  if (confidence) return (*confidence)[row];
  if (max_kernel) return (*max_kernel)[row];
  const std::size_t c = classes();
  const double* p = probs.data() + row * c;
  return *std::max_element(p, p + c);
}

PredictionSet predict_baseline(nn::Model& model, const Tensor& batch) {
  PredictionSet pred;
  pred.probs = forward_chunked(model, batch, nullptr);
  return pred;
}

namespace {

PredictionSet mc_mean_predict(nn::Model& model, const Tensor& batch, std::size_t samples,
                              RngStream& rng) {
  if (samples < 1) throw std::invalid_argument("MC prediction needs at least one sample");
  // Streams are pre-split per pass so the reduction is fixed by index and
  // independent of any scheduling.
  std::vector<RngStream> streams;
  streams.reserve(samples);
  for (std::size_t m = 0; m < samples; ++m) streams.push_back(rng.split());
  model.set_stochastic_eval(true);
  Tensor sum;
  try {
    for (std::size_t m = 0; m < samples; ++m) {
      Tensor probs = forward_chunked(model, batch, &streams[m]);
      if (sum.empty()) {
        sum = std::move(probs);
      } else {
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += probs[i];
      }
    }
  } catch (...) {
    model.set_stochastic_eval(false);
    throw;
  }
  model.set_stochastic_eval(false);
  const double inv = 1.0 / static_cast<double>(samples);
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] *= inv;
  PredictionSet pred;
  pred.probs = std::move(sum);
  return pred;
}

}  // namespace

PredictionSet predict_mc(nn::Model& model, const Tensor& batch, std::size_t samples, Method kind,
                         RngStream& rng) {
  if (kind == Method::kDropout) {
    if (model.count_layers(nn::LayerKind::kDropout) != 1) {
      throw std::runtime_error("predict_mc: model must contain exactly one dropout layer");
    }
  } else if (kind == Method::kDropConnect) {
    if (model.count_layers(nn::LayerKind::kDropConnect) == 0) {
      throw std::runtime_error("predict_mc: model has no dropconnect layer");
    }
  } else {
    throw std::invalid_argument("predict_mc: kind must be dropout or dropconnect");
  }
  return mc_mean_predict(model, batch, samples, rng);
}

PredictionSet predict_flipout(nn::Model& model, const Tensor& batch, std::size_t samples,
                              RngStream& rng) {
  if (model.count_layers(nn::LayerKind::kFlipoutDense) == 0) {
    throw std::runtime_error("predict_flipout: model has no flipout layer");
  }
  return mc_mean_predict(model, batch, samples, rng);
}

std::vector<nn::Model> train_ensemble(const nn::ModelSpec& spec, const data::LabeledDataset& data,
                                      const nn::TrainConfig& cfg, std::size_t members,
                                      std::uint64_t base_seed) {
  if (members < 1) throw std::invalid_argument("train_ensemble: need at least one member");
  std::vector<nn::Model> models;
  models.reserve(members);
  for (std::size_t k = 0; k < members; ++k) {
    nn::Model model(spec, derive_seed(base_seed, 0x1417, k));
    nn::TrainConfig member_cfg = cfg;
    member_cfg.seed = derive_seed(base_seed, 0x7217, k);
    nn::train(model, data, member_cfg);
    models.push_back(std::move(model));
  }
  return models;
}

PredictionSet predict_ensemble(std::vector<nn::Model>& models, const Tensor& batch) {
  if (models.empty()) throw std::invalid_argument("predict_ensemble: empty ensemble");
  Tensor sum;
  for (auto& model : models) {
    Tensor probs = forward_chunked(model, batch, nullptr);
    if (sum.empty()) {
      sum = std::move(probs);
    } else {
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += probs[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] *= inv;
  PredictionSet pred;
  pred.probs = std::move(sum);
  return pred;
}

Tensor duq_forward(nn::Model& model, const Tensor& batch) {
  if (model.output_kind() != nn::OutputKind::kRbfKernels) {
    throw std::runtime_error("duq_forward: model has no RBF output head");
  }
  return forward_chunked(model, batch, nullptr);
}

Tensor duq_to_probs(const Tensor& kernels) {
  const std::size_t n = kernels.dim(0), classes = kernels.dim(1);
  Tensor probs(kernels.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += kernels.at(i, c);
    if (sum <= 0.0) {
      for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) = 1.0 / static_cast<double>(classes);
    } else {
      for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) = kernels.at(i, c) / sum;
    }
  }
  return probs;
}

PredictionSet predict_duq(nn::Model& model, const Tensor& batch) {
  const Tensor kernels = duq_forward(model, batch);
  PredictionSet pred;
  pred.probs = duq_to_probs(kernels);
  std::vector<double> max_kernel(kernels.dim(0));
  for (std::size_t i = 0; i < kernels.dim(0); ++i) {
    const double* row = kernels.data() + i * kernels.dim(1);
    max_kernel[i] = *std::max_element(row, row + kernels.dim(1));
  }
  pred.max_kernel = std::move(max_kernel);
  return pred;
}

double aggregate_gradient(const std::vector<double>& v, GradAggregator aggregator) {
  if (v.empty()) throw std::invalid_argument("aggregate_gradient: empty vector");
  switch (aggregator) {
    case GradAggregator::kL1: {
      double s = 0.0;
      for (double x : v) s += std::abs(x);
      return s;
    }
    case GradAggregator::kL2: {
      double s = 0.0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    }
    case GradAggregator::kMean: {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    }
    case GradAggregator::kStd: {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - mean) * (x - mean);
      return std::sqrt(s / static_cast<double>(v.size()));
    }
    case GradAggregator::kMin: return *std::min_element(v.begin(), v.end());
    case GradAggregator::kMax: return *std::max_element(v.begin(), v.end());
  }
  throw std::logic_error("aggregate_gradient: unknown aggregator");
}

std::vector<double> gradient_scores(nn::Model& model, const Tensor& batch, GradAggregator aggregator) {
  if (model.output_kind() != nn::OutputKind::kSoftmaxProbs) {
    throw std::runtime_error("gradient_scores: needs a softmax classifier");
  }
  const std::size_t n = batch.dim(0);
  const std::size_t stride = batch.size() / n;
  std::vector<std::size_t> shape = batch.shape();
  shape[0] = 1;
  std::vector<double> scores(n);
  std::vector<double> flat;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor sample(shape, std::vector<double>(batch.data() + i * stride, batch.data() + (i + 1) * stride));
    const Tensor probs = model.forward(sample, nn::Mode::kEval, nullptr);
    const std::size_t classes = probs.dim(1);
    std::size_t predicted = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (probs.at(0, c) > probs.at(0, predicted)) predicted = c;
    }
    const nn::LossGrad lg =
        nn::categorical_cross_entropy(probs, {static_cast<int>(predicted)});
    model.backward_from_logits(lg.grad);
    flat.clear();
    for (nn::Param* p : model.trainable()) {
      flat.insert(flat.end(), p->grad.values().begin(), p->grad.values().end());
    }
    scores[i] = aggregate_gradient(flat, aggregator);
  }
  return scores;
}

std::vector<double> gradient_to_confidence(const std::vector<double>& raw_scores) {
  if (raw_scores.empty()) throw std::invalid_argument("gradient_to_confidence: empty score set");
  const auto [lo_it, hi_it] = std::minmax_element(raw_scores.begin(), raw_scores.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> confidence(raw_scores.size(), 1.0);
  if (hi > lo) {
    // Direct division keeps the endpoints exact: (hi-lo)/(hi-lo) == 1.
    const double range = hi - lo;
    for (std::size_t i = 0; i < raw_scores.size(); ++i) {
      confidence[i] = 1.0 - (raw_scores[i] - lo) / range;
    }
  }
  return confidence;
}

PredictionSet predict_gradient(nn::Model& model, const Tensor& batch, GradAggregator aggregator) {
  PredictionSet pred = predict_baseline(model, batch);
  pred.raw_score = gradient_scores(model, batch, aggregator);
  pred.confidence = gradient_to_confidence(*pred.raw_score);
  return pred;
}

}  // namespace uq::methods
