#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "uqbench/layers.hpp"

namespace uq::nn {

enum class LayerKind {
  kDense,
  kConv3x3,
  kMaxPool2x2,
  kBatchNorm,
  kRelu,
  kSoftmax,
  kSoftplus,
  kDropout,
  kDropConnect,
  kFlipoutDense,
  kRbfOutput,
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind;
  std::size_t units = 0;         // dense/dropconnect/flipout outputs, conv out channels, rbf classes
  double drop_prob = 0.0;        // dropout / dropconnect
  std::size_t centroid_dim = 0;  // rbf
  double length_scale = 0.1;     // rbf
};

enum class OutputKind {
  kSoftmaxProbs,       // classifier, trunk ends with softmax
  kRbfKernels,         // classifier, trunk ends with an RBF head
  kRegressionMean,     // single mean head
  kRegressionMeanVar,  // mean head + positive variance head, output (batch, 2)
};

// Declarative model description: a trunk plus, for regression, one or two
// heads that branch from the trunk output.
struct ModelSpec {
  std::vector<std::size_t> input_shape;  // per-sample shape, without the batch dim
  std::size_t num_classes = 0;           // classification only
  std::vector<LayerSpec> trunk;
  std::vector<LayerSpec> mean_head;
  std::vector<LayerSpec> var_head;
  OutputKind output = OutputKind::kSoftmaxProbs;
};

// A built network. Instances are single-threaded: forward caches feed the
// next backward. Distinct instances are fully independent.
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  OutputKind output_kind() const { return spec_.output; }

  // Classification: (batch, classes) probabilities or kernels.
  // Regression: (batch, 1) mean, or (batch, 2) [mean, variance] when
  // two-headed (variance already softplus-positive).
  Tensor forward(const Tensor& batch, Mode mode, RngStream* rng = nullptr);

  // upstream is w.r.t. the model output; returns the input gradient.
  Tensor backward(const Tensor& upstream);
  // Fused path for softmax classifiers: upstream is w.r.t. the pre-softmax
  // logits, so the final softmax layer is skipped.
  Tensor backward_from_logits(const Tensor& upstream);

  std::vector<Param*> trainable();    // stable order
  std::vector<Param*> all_tensors();  // trainable + persistent state

  void set_stochastic_eval(bool on);
  std::size_t count_layers(LayerKind kind) const;

  const std::vector<std::unique_ptr<Layer>>& trunk() const { return trunk_; }
  Layer* output_layer();  // last trunk layer

 private:
  Tensor run(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& input, Mode mode, RngStream* rng,
             const char* section);
  Tensor run_backward(std::vector<std::unique_ptr<Layer>>& layers, Tensor grad, std::size_t skip_last = 0);

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> trunk_;
  std::vector<std::unique_ptr<Layer>> mean_head_;
  std::vector<std::unique_ptr<Layer>> var_head_;
};

// Flat binary weight snapshot: magic "UQW1", then per tensor: u32 name
// length, name bytes, u32 rank, u32 dims, little-endian float64 values.
void save_weights(Model& model, const std::string& path);
void load_weights(Model& model, const std::string& path);

bool weights_equal(Model& a, Model& b);

}  // namespace uq::nn
