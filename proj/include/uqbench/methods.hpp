#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqbench/datasets.hpp"
#include "uqbench/model.hpp"
#include "uqbench/prediction.hpp"
#include "uqbench/train.hpp"

namespace uq::methods {

enum class Method { kBaseline, kDropout, kDropConnect, kDeepEnsemble, kDuq, kFlipout, kGradient };

enum class GradAggregator { kL1, kL2, kMean, kStd, kMin, kMax };

const char* method_name(Method m);            // baseline, dropout, ...
const char* aggregator_name(GradAggregator);  // l1_norm, l2_norm, mean, std, min, max
Method parse_method(const std::string& name);
GradAggregator parse_aggregator(const std::string& name);

struct DuqConfig {
  double length_scale = 0.1;
  std::size_t centroid_dim = 0;  // 0 = number of penultimate units
};

struct MethodConfig {
  Method method = Method::kBaseline;
  std::size_t mc_samples = 50;
  double drop_prob = 0.25;
  std::size_t ensemble_size = 5;
  DuqConfig duq;
  GradAggregator aggregator = GradAggregator::kL1;

  void validate() const;
};

// Network families: the convolutional stack (3x conv/relu/batchnorm/pool,
// dense 256) for image datasets and the 32-32 MLP for 2D toys. The method
// decides the output block (plain softmax, dropout before the output layer,
// dropconnect/flipout output layer, or an RBF head).
enum class Backbone { kMiniCnn, kMlp32 };

const char* backbone_name(Backbone b);  // miniVGG, mlp

nn::ModelSpec make_classifier_spec(Backbone backbone, const std::vector<std::size_t>& input_shape,
                                   std::size_t classes, const MethodConfig& cfg);

// Single deterministic eval-mode forward pass.
PredictionSet predict_baseline(nn::Model& model, const Tensor& batch);

// Mean over `samples` stochastic eval-mode passes; batchnorm stays frozen.
// kind must be kDropout or kDropConnect and the model must contain the
// matching layer.
PredictionSet predict_mc(nn::Model& model, const Tensor& batch, std::size_t samples, Method kind,
                         RngStream& rng);

// Flipout output layers sample on every pass; same MC protocol.
PredictionSet predict_flipout(nn::Model& model, const Tensor& batch, std::size_t samples,
                              RngStream& rng);

// Members share the architecture and differ only by seed (init + shuffling).
std::vector<nn::Model> train_ensemble(const nn::ModelSpec& spec, const data::LabeledDataset& data,
                                      const nn::TrainConfig& cfg, std::size_t members,
                                      std::uint64_t base_seed);
PredictionSet predict_ensemble(std::vector<nn::Model>& models, const Tensor& batch);

// Per-class kernel values K_c in (0,1] from the RBF head.
Tensor duq_forward(nn::Model& model, const Tensor& batch);
// kernels / sum(kernels); an all-zero row (underflow) becomes uniform.
Tensor duq_to_probs(const Tensor& kernels);
PredictionSet predict_duq(nn::Model& model, const Tensor& batch);

// Per-sample aggregated gradient norm under the self-predicted virtual
// label; eval-mode forward, one sample at a time.
std::vector<double> gradient_scores(nn::Model& model, const Tensor& batch, GradAggregator aggregator);
double aggregate_gradient(const std::vector<double>& v, GradAggregator aggregator);
// Min-max normalization to [0,1] followed by p = 1 - g; a degenerate range
// maps everything to confidence 1.
std::vector<double> gradient_to_confidence(const std::vector<double>& raw_scores);

PredictionSet predict_gradient(nn::Model& model, const Tensor& batch, GradAggregator aggregator);

}  // namespace uq::methods
