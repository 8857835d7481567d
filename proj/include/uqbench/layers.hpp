#pragma once

#include <memory>
#include <string>
#include <vector>

#include "uqbench/rng.hpp"
#include "uqbench/tensor.hpp"

namespace uq::nn {

enum class Mode { kTrain, kEval };

// Named tensor owned by a layer, with a gradient buffer of the same shape.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}
};

// Base class for all layers. forward() caches whatever backward() needs;
// backward() returns the input gradient and fills parameter gradients for
// exactly the forward pass that was executed (including any sampled masks).
class Layer {
 public:
  virtual ~Layer() = default;

  virtual const char* kind() const = 0;

  // rng is consumed only by stochastic kinds and may be null otherwise.
  virtual Tensor forward(const Tensor& input, Mode mode, RngStream* rng) = 0;
  virtual Tensor backward(const Tensor& upstream) = 0;

  virtual std::vector<Param*> params() { return {}; }  // trainable
  virtual std::vector<Param*> state() { return {}; }   // persistent, non-trainable

  virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;

  // When set, stochastic layers keep sampling in eval mode (MC prediction).
  virtual void set_stochastic_eval(bool) {}
  virtual bool stochastic() const { return false; }

 protected:
  bool has_cache_ = false;
  void require_cache() const;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(std::string name, std::size_t in_features, std::size_t out_features, RngStream& rng);

  const char* kind() const override { return "dense"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;

  Param weight;  // (in, out)
  Param bias;    // (out)

 private:
  std::size_t in_features_, out_features_;
  Tensor cached_input_;  // flattened to (batch, in)
};

// 3x3 convolution with unit-stride "same" padding.
class Conv3x3Layer : public Layer {
 public:
  Conv3x3Layer(std::string name, std::size_t in_channels, std::size_t out_channels, RngStream& rng);

  const char* kind() const override { return "conv2d_3x3"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;

  Param weight;  // (out_ch, in_ch, 3, 3)
  Param bias;    // (out_ch)

 private:
  void im2col(const double* img, std::size_t h, std::size_t w, double* cols) const;
  std::size_t in_channels_, out_channels_;
  Tensor cached_input_;
};

class MaxPool2x2Layer : public Layer {
 public:
  const char* kind() const override { return "maxpool_2x2"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;  // flat input index per output element
};

// Per-channel (rank 4) or per-feature (rank 2) batch normalization. Train
// mode normalizes with batch statistics and updates the running averages;
// eval mode uses the running averages only.
class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(std::string name, std::size_t channels);

  const char* kind() const override { return "batchnorm"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&gamma, &beta}; }
  std::vector<Param*> state() override { return {&running_mean, &running_var}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }

  Param gamma, beta;
  Param running_mean, running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

 private:
  std::size_t channels_;
  Mode cached_mode_ = Mode::kTrain;
  std::vector<std::size_t> in_shape_;
  std::vector<double> inv_std_;  // per channel
  Tensor cached_norm_;           // normalized activations (train mode)
};

class ReluLayer : public Layer {
 public:
  const char* kind() const override { return "relu"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }

 private:
  Tensor cached_input_;
};

// Row-wise softmax over (batch, classes), computed with max subtraction.
class SoftmaxLayer : public Layer {
 public:
  const char* kind() const override { return "softmax"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }

 private:
  Tensor cached_output_;
};

class SoftplusLayer : public Layer {
 public:
  const char* kind() const override { return "softplus"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }

 private:
  Tensor cached_input_;
};

// Inverted dropout: kept activations are scaled by 1/(1-p) whenever the mask
// is active, so drop_prob = 0 is an exact identity.
class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(double drop_prob);

  const char* kind() const override { return "dropout"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }
  void set_stochastic_eval(bool on) override { stochastic_eval_ = on; }
  bool stochastic() const override { return true; }

  double drop_prob;

 private:
  bool stochastic_eval_ = false;
  bool mask_active_ = false;
  Tensor mask_;
};

// Dense layer whose weight matrix is masked elementwise per forward pass.
// Masked weights are used as-is (no 1/(1-p) rescaling); the bias is never
// masked. Deterministic eval uses the full weight matrix.
class DropConnectLayer : public Layer {
 public:
  DropConnectLayer(std::string name, std::size_t in_features, std::size_t out_features,
                   double drop_prob, RngStream& rng);

  const char* kind() const override { return "dropconnect"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  void set_stochastic_eval(bool on) override { stochastic_eval_ = on; }
  bool stochastic() const override { return true; }

  Param weight;  // (in, out)
  Param bias;    // (out)
  double drop_prob;

 private:
  std::size_t in_features_, out_features_;
  bool stochastic_eval_ = false;
  bool mask_active_ = false;
  Tensor mask_;          // same shape as weight
  Tensor cached_input_;  // (batch, in)
};

// Dense layer with a Gaussian weight posterior (mean + softplus-parameterized
// std) and a single learnable scalar bias. Each forward pass samples one
// shared noise matrix and decorrelates examples with per-example sign flips.
// There is no prior/KL term; training uses one sampled pass per batch.
class FlipoutDenseLayer : public Layer {
 public:
  FlipoutDenseLayer(std::string name, std::size_t in_features, std::size_t out_features,
                    RngStream& rng, double initial_std = 0.05);

  const char* kind() const override { return "flipout_dense"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&weight_mu, &weight_rho, &bias}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  bool stochastic() const override { return true; }

  Param weight_mu;   // (in, out)
  Param weight_rho;  // (in, out), std = softplus(rho)
  Param bias;        // scalar, shape (1)

 private:
  std::size_t in_features_, out_features_;
  Tensor cached_input_;  // (batch, in)
  Tensor sign_in_;       // (batch, in), +-1
  Tensor sign_out_;      // (batch, out), +-1
  Tensor noise_;         // (in, out), shared per pass
  Tensor sigma_;         // softplus(rho), cached
};

// Radial-basis-function classification head: one weight matrix and one
// centroid per class, both trained by gradient descent. Outputs per-class
// kernel values in (0, 1].
class RbfOutputLayer : public Layer {
 public:
  RbfOutputLayer(std::string name, std::size_t in_features, std::size_t classes,
                 std::size_t centroid_dim, double length_scale, RngStream& rng);

  const char* kind() const override { return "rbf_output"; }
  Tensor forward(const Tensor& input, Mode mode, RngStream* rng) override;
  Tensor backward(const Tensor& upstream) override;
  std::vector<Param*> params() override { return {&class_weights, &centroids}; }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;

  Param class_weights;  // (classes, centroid_dim, in)
  Param centroids;      // (classes, centroid_dim)
  double length_scale;

 private:
  std::size_t in_features_, classes_, centroid_dim_;
  Tensor cached_input_;      // (batch, in)
  Tensor cached_projected_;  // (batch, classes, centroid_dim)
  Tensor cached_kernels_;    // (batch, classes)
};

// Flattens (batch, ...) to (batch, features); throws on mismatch.
Tensor as_matrix(const Tensor& input, std::size_t expected_features, const char* who);

double softplus(double x);
double glorot_limit(std::size_t fan_in, std::size_t fan_out);
void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, RngStream& rng);

}  // namespace uq::nn
