#include "uqbench/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace uq::nn {

void Layer::require_cache() const {
  if (!has_cache_) {
    throw std::runtime_error(std::string(kind()) + ": backward called without a cached forward pass");
  }
}

Tensor as_matrix(const Tensor& input, std::size_t expected_features, const char* who) {
  if (input.rank() < 2) {
    throw std::runtime_error(std::string(who) + ": expected a batched input, got shape " + input.shape_str());
  }
  const std::size_t batch = input.dim(0);
  const std::size_t features = input.size() / batch;
  if (features != expected_features) {
    throw std::runtime_error(std::string(who) + ": expected " + std::to_string(expected_features) +
                             " features per sample, got " + std::to_string(features) + " (input shape " +
                             input.shape_str() + ")");
  }
  return input.reshaped({batch, features});
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = glorot_limit(fan_in, fan_out);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------- Dense

DenseLayer::DenseLayer(std::string name, std::size_t in_features, std::size_t out_features, RngStream& rng)
    : weight(name + ".weight", Tensor({in_features, out_features})),
      bias(name + ".bias", Tensor({out_features})),
      in_features_(in_features),
      out_features_(out_features) {
  glorot_fill(weight.value, in_features, out_features, rng);
}

Tensor DenseLayer::forward(const Tensor& input, Mode, RngStream*) {
  cached_input_ = as_matrix(input, in_features_, kind());
  const std::size_t batch = cached_input_.dim(0);
  Tensor out({batch, out_features_});
  matmul(false, false, batch, out_features_, in_features_, cached_input_.data(), weight.value.data(), 0.0,
         out.data());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < out_features_; ++j) out.at(n, j) += bias.value[j];
  }
  has_cache_ = true;
  return out;
}

Tensor DenseLayer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_input_.dim(0);
  // dW = x^T g, db = sum_n g, dx = g W^T
  matmul(true, false, in_features_, out_features_, batch, cached_input_.data(), upstream.data(), 0.0,
         weight.grad.data());
  std::fill(bias.grad.values().begin(), bias.grad.values().end(), 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < out_features_; ++j) bias.grad[j] += upstream.at(n, j);
  }
  Tensor dx({batch, in_features_});
  matmul(false, true, batch, in_features_, out_features_, upstream.data(), weight.value.data(), 0.0,
         dx.data());
  return dx;
}

std::vector<std::size_t> DenseLayer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], out_features_};
}

// ---------------------------------------------------------------- Conv 3x3

Conv3x3Layer::Conv3x3Layer(std::string name, std::size_t in_channels, std::size_t out_channels,
                           RngStream& rng)
    : weight(name + ".weight", Tensor({out_channels, in_channels, 3, 3})),
      bias(name + ".bias", Tensor({out_channels})),
      in_channels_(in_channels),
      out_channels_(out_channels) {
  glorot_fill(weight.value, in_channels * 9, out_channels * 9, rng);
}

// cols is (in_ch*9) x (h*w), one column per output pixel, zero padding of 1.
void Conv3x3Layer::im2col(const double* img, std::size_t h, std::size_t w, double* cols) const {
  const std::size_t hw = h * w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < in_channels_; ++c) {
    const double* plane = img + c * hw;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx, ++row) {
        double* dst = cols + row * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::memset(dst + y * w, 0, w * sizeof(double));
            continue;
          }
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            dst[y * w + x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : plane[sy * w + sx];
          }
        }
      }
    }
  }
}

Tensor Conv3x3Layer::forward(const Tensor& input, Mode, RngStream*) {
  if (input.rank() != 4 || input.dim(1) != in_channels_) {
    throw std::runtime_error(std::string(kind()) + ": expected input (batch, " +
                             std::to_string(in_channels_) + ", h, w), got " + input.shape_str());
  }
  cached_input_ = input;
  const std::size_t batch = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t hw = h * w, patch = in_channels_ * 9;
  Tensor out({batch, out_channels_, h, w});
  std::vector<double> cols(patch * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(input.data() + n * in_channels_ * hw, h, w, cols.data());
    double* dst = out.data() + n * out_channels_ * hw;
    matmul(false, false, out_channels_, hw, patch, weight.value.data(), cols.data(), 0.0, dst);
    for (std::size_t c = 0; c < out_channels_; ++c) {
      const double b = bias.value[c];
      for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] += b;
    }
  }
  has_cache_ = true;
  return out;
}

Tensor Conv3x3Layer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_input_.dim(0), h = cached_input_.dim(2), w = cached_input_.dim(3);
  const std::size_t hw = h * w, patch = in_channels_ * 9;
  std::fill(weight.grad.values().begin(), weight.grad.values().end(), 0.0);
  std::fill(bias.grad.values().begin(), bias.grad.values().end(), 0.0);
  Tensor dx(cached_input_.shape());
  std::vector<double> cols(patch * hw);
  std::vector<double> dcols(patch * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* g = upstream.data() + n * out_channels_ * hw;
    im2col(cached_input_.data() + n * in_channels_ * hw, h, w, cols.data());
    // dW += g . cols^T
    matmul(false, true, out_channels_, patch, hw, g, cols.data(), 1.0, weight.grad.data());
    for (std::size_t c = 0; c < out_channels_; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += g[c * hw + i];
      bias.grad[c] += acc;
    }
    // dcols = W^T . g, scattered back onto the image (col2im).
    matmul(true, false, patch, hw, out_channels_, weight.value.data(), g, 0.0, dcols.data());
    double* dimg = dx.data() + n * in_channels_ * hw;
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_channels_; ++c) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dxo = -1; dxo <= 1; ++dxo, ++row) {
          const double* src = dcols.data() + row * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y) + dy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
              const long sx = static_cast<long>(x) + dxo;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              dimg[c * hw + sy * w + sx] += src[y * w + x];
            }
          }
        }
      }
    }
  }
  return dx;
}

std::vector<std::size_t> Conv3x3Layer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], out_channels_, in[2], in[3]};
}

// ---------------------------------------------------------------- MaxPool

Tensor MaxPool2x2Layer::forward(const Tensor& input, Mode, RngStream*) {
  if (input.rank() != 4) {
    throw std::runtime_error(std::string(kind()) + ": expected rank-4 input, got " + input.shape_str());
  }
  const std::size_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) {
    throw std::runtime_error(std::string(kind()) + ": input " + input.shape_str() + " too small to pool");
  }
  in_shape_ = input.shape();
  Tensor out({batch, ch, oh, ow});
  argmax_.assign(out.size(), 0);
  for (std::size_t nc = 0; nc < batch * ch; ++nc) {
    const double* plane = input.data() + nc * h * w;
    double* dst = out.data() + nc * oh * ow;
    std::size_t* amax = argmax_.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (2 * y) * w + 2 * x;
        double best_v = plane[best];
        const std::size_t cand[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                     (2 * y + 1) * w + 2 * x + 1};
        for (std::size_t idx : cand) {
          if (plane[idx] > best_v) {
            best_v = plane[idx];
            best = idx;
          }
        }
        dst[y * ow + x] = best_v;
        amax[y * ow + x] = nc * h * w + best;
      }
    }
  }
  has_cache_ = true;
  return out;
}

Tensor MaxPool2x2Layer::backward(const Tensor& upstream) {
  require_cache();
  Tensor dx(in_shape_);
  for (std::size_t i = 0; i < upstream.size(); ++i) dx[argmax_[i]] += upstream[i];
  return dx;
}

std::vector<std::size_t> MaxPool2x2Layer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], in[1], in[2] / 2, in[3] / 2};
}

// ---------------------------------------------------------------- BatchNorm

BatchNormLayer::BatchNormLayer(std::string name, std::size_t channels)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels})),
      running_mean(name + ".running_mean", Tensor({channels})),
      running_var(name + ".running_var", Tensor({channels}, 1.0)),
      channels_(channels) {}

namespace {

// Addresses a rank-2 (batch, features) or rank-4 (batch, ch, h, w) tensor as
// (channel, element-within-channel).
struct ChannelView {
  std::size_t channels, spatial, per_channel;

  explicit ChannelView(const std::vector<std::size_t>& shape) {
    channels = shape[1];
    spatial = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) spatial *= shape[i];
    per_channel = shape[0] * spatial;
  }

  std::size_t index(std::size_t c, std::size_t m) const {
    const std::size_t n = m / spatial, s = m % spatial;
    return (n * channels + c) * spatial + s;
  }
};

}  // namespace

Tensor BatchNormLayer::forward(const Tensor& input, Mode mode, RngStream*) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw std::runtime_error(std::string(kind()) + ": expected rank-2 or rank-4 input, got " +
                             input.shape_str());
  }
  if (input.dim(1) != channels_) {
    throw std::runtime_error(std::string(kind()) + ": expected " + std::to_string(channels_) +
                             " channels, got " + std::to_string(input.dim(1)));
  }
  in_shape_ = input.shape();
  cached_mode_ = mode;
  const ChannelView view(in_shape_);
  Tensor out(in_shape_);
  cached_norm_ = Tensor(in_shape_);
  inv_std_.assign(channels_, 0.0);
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      mean = 0.0;
      for (std::size_t m = 0; m < view.per_channel; ++m) mean += input[view.index(c, m)];
      mean /= static_cast<double>(view.per_channel);
      var = 0.0;
      for (std::size_t m = 0; m < view.per_channel; ++m) {
        const double d = input[view.index(c, m)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(view.per_channel);
      running_mean.value[c] = momentum * running_mean.value[c] + (1.0 - momentum) * mean;
      running_var.value[c] = momentum * running_var.value[c] + (1.0 - momentum) * var;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std_[c] = inv;
    for (std::size_t m = 0; m < view.per_channel; ++m) {
      const std::size_t i = view.index(c, m);
      const double norm = (input[i] - mean) * inv;
      cached_norm_[i] = norm;
      out[i] = gamma.value[c] * norm + beta.value[c];
    }
  }
  has_cache_ = true;
  return out;
}

Tensor BatchNormLayer::backward(const Tensor& upstream) {
  require_cache();
  const ChannelView view(in_shape_);
  Tensor dx(in_shape_);
  const double m = static_cast<double>(view.per_channel);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t k = 0; k < view.per_channel; ++k) {
      const std::size_t i = view.index(c, k);
      sum_g += upstream[i];
      sum_gx += upstream[i] * cached_norm_[i];
    }
    gamma.grad[c] = sum_gx;
    beta.grad[c] = sum_g;
    if (cached_mode_ == Mode::kTrain) {
      const double scale = gamma.value[c] * inv_std_[c] / m;
      for (std::size_t k = 0; k < view.per_channel; ++k) {
        const std::size_t i = view.index(c, k);
        dx[i] = scale * (m * upstream[i] - sum_g - cached_norm_[i] * sum_gx);
      }
    } else {
      // Frozen statistics: the layer is a per-channel affine map.
      const double scale = gamma.value[c] * inv_std_[c];
      for (std::size_t k = 0; k < view.per_channel; ++k) {
        const std::size_t i = view.index(c, k);
        dx[i] = scale * upstream[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

Tensor ReluLayer::forward(const Tensor& input, Mode, RngStream*) {
  cached_input_ = input;
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  has_cache_ = true;
  return out;
}

Tensor ReluLayer::backward(const Tensor& upstream) {
  require_cache();
  Tensor dx(cached_input_.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = cached_input_[i] > 0.0 ? upstream[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------- Softmax

Tensor SoftmaxLayer::forward(const Tensor& input, Mode, RngStream*) {
  if (input.rank() != 2) {
    throw std::runtime_error(std::string(kind()) + ": expected (batch, classes), got " + input.shape_str());
  }
  const std::size_t batch = input.dim(0), classes = input.dim(1);
  Tensor out(input.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    double mx = input.at(n, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, input.at(n, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(input.at(n, c) - mx);
      out.at(n, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < classes; ++c) out.at(n, c) /= sum;
  }
  cached_output_ = out;
  has_cache_ = true;
  return out;
}

Tensor SoftmaxLayer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_output_.dim(0), classes = cached_output_.dim(1);
  Tensor dx(cached_output_.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    double dot = 0.0;
    for (std::size_t c = 0; c < classes; ++c) dot += upstream.at(n, c) * cached_output_.at(n, c);
    for (std::size_t c = 0; c < classes; ++c) {
      dx.at(n, c) = cached_output_.at(n, c) * (upstream.at(n, c) - dot);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Softplus

Tensor SoftplusLayer::forward(const Tensor& input, Mode, RngStream*) {
  cached_input_ = input;
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = softplus(input[i]);
  has_cache_ = true;
  return out;
}

Tensor SoftplusLayer::backward(const Tensor& upstream) {
  require_cache();
  Tensor dx(cached_input_.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-cached_input_[i]));
    dx[i] = upstream[i] * sig;
  }
  return dx;
}

// ---------------------------------------------------------------- Dropout

DropoutLayer::DropoutLayer(double drop_prob_) : drop_prob(drop_prob_) {
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw std::invalid_argument("dropout: drop probability must be in [0, 1), got " +
                                std::to_string(drop_prob));
  }
}

Tensor DropoutLayer::forward(const Tensor& input, Mode mode, RngStream* rng) {
  mask_active_ = (mode == Mode::kTrain) || stochastic_eval_;
  has_cache_ = true;
  if (!mask_active_) {
    mask_ = Tensor();
    return input;
  }
  if (rng == nullptr) {
    throw std::runtime_error("dropout: an rng stream is required for a stochastic forward pass");
  }
  const double keep = 1.0 - drop_prob;
  const double scale = 1.0 / keep;
  mask_ = Tensor(input.shape());
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    mask_[i] = rng->bernoulli(drop_prob) ? 0.0 : scale;
    out[i] = input[i] * mask_[i];
  }
  return out;
}

Tensor DropoutLayer::backward(const Tensor& upstream) {
  require_cache();
  if (!mask_active_) return upstream;
  Tensor dx(upstream.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = upstream[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------- DropConnect

DropConnectLayer::DropConnectLayer(std::string name, std::size_t in_features, std::size_t out_features,
                                   double drop_prob_, RngStream& rng)
    : weight(name + ".weight", Tensor({in_features, out_features})),
      bias(name + ".bias", Tensor({out_features})),
      drop_prob(drop_prob_),
      in_features_(in_features),
      out_features_(out_features) {
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw std::invalid_argument("dropconnect: drop probability must be in [0, 1), got " +
                                std::to_string(drop_prob));
  }
  glorot_fill(weight.value, in_features, out_features, rng);
}

Tensor DropConnectLayer::forward(const Tensor& input, Mode mode, RngStream* rng) {
  cached_input_ = as_matrix(input, in_features_, kind());
  mask_active_ = (mode == Mode::kTrain) || stochastic_eval_;
  const std::size_t batch = cached_input_.dim(0);
  Tensor out({batch, out_features_});
  const double* w = weight.value.data();
  Tensor masked;
  if (mask_active_) {
    if (rng == nullptr) {
      throw std::runtime_error("dropconnect: an rng stream is required for a stochastic forward pass");
    }
    mask_ = Tensor(weight.value.shape());
    masked = Tensor(weight.value.shape());
    for (std::size_t i = 0; i < mask_.size(); ++i) {
      mask_[i] = rng->bernoulli(drop_prob) ? 0.0 : 1.0;
      masked[i] = weight.value[i] * mask_[i];
    }
    w = masked.data();
  } else {
    mask_ = Tensor();
  }
  matmul(false, false, batch, out_features_, in_features_, cached_input_.data(), w, 0.0, out.data());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < out_features_; ++j) out.at(n, j) += bias.value[j];
  }
  has_cache_ = true;
  return out;
}

Tensor DropConnectLayer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_input_.dim(0);
  matmul(true, false, in_features_, out_features_, batch, cached_input_.data(), upstream.data(), 0.0,
         weight.grad.data());
  std::fill(bias.grad.values().begin(), bias.grad.values().end(), 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < out_features_; ++j) bias.grad[j] += upstream.at(n, j);
  }
  Tensor dx({batch, in_features_});
  if (mask_active_) {
    // Only surviving weights contribute, both to dW and to dx.
    for (std::size_t i = 0; i < weight.grad.size(); ++i) weight.grad[i] *= mask_[i];
    Tensor masked(weight.value.shape());
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = weight.value[i] * mask_[i];
    matmul(false, true, batch, in_features_, out_features_, upstream.data(), masked.data(), 0.0, dx.data());
  } else {
    matmul(false, true, batch, in_features_, out_features_, upstream.data(), weight.value.data(), 0.0,
           dx.data());
  }
  return dx;
}

std::vector<std::size_t> DropConnectLayer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], out_features_};
}

// ---------------------------------------------------------------- Flipout

FlipoutDenseLayer::FlipoutDenseLayer(std::string name, std::size_t in_features, std::size_t out_features,
                                     RngStream& rng, double initial_std)
    : weight_mu(name + ".weight_mu", Tensor({in_features, out_features})),
      weight_rho(name + ".weight_rho", Tensor({in_features, out_features})),
      bias(name + ".bias", Tensor({1})),
      in_features_(in_features),
      out_features_(out_features) {
  glorot_fill(weight_mu.value, in_features, out_features, rng);
  // softplus(rho) == initial_std
  const double rho0 = std::log(std::expm1(initial_std));
  std::fill(weight_rho.value.values().begin(), weight_rho.value.values().end(), rho0);
}

Tensor FlipoutDenseLayer::forward(const Tensor& input, Mode, RngStream* rng) {
  if (rng == nullptr) {
    throw std::runtime_error("flipout_dense: an rng stream is required (stochastic layer)");
  }
  cached_input_ = as_matrix(input, in_features_, kind());
  const std::size_t batch = cached_input_.dim(0);

  sigma_ = Tensor(weight_rho.value.shape());
  for (std::size_t i = 0; i < sigma_.size(); ++i) sigma_[i] = softplus(weight_rho.value[i]);

  noise_ = Tensor({in_features_, out_features_});
  for (std::size_t i = 0; i < noise_.size(); ++i) noise_[i] = rng->normal();
  sign_in_ = Tensor({batch, in_features_});
  for (std::size_t i = 0; i < sign_in_.size(); ++i) sign_in_[i] = rng->rademacher();
  sign_out_ = Tensor({batch, out_features_});
  for (std::size_t i = 0; i < sign_out_.size(); ++i) sign_out_[i] = rng->rademacher();

  // out = x mu + ((x o s_in)(sigma o E)) o s_out + b
  Tensor out({batch, out_features_});
  matmul(false, false, batch, out_features_, in_features_, cached_input_.data(), weight_mu.value.data(),
         0.0, out.data());
  Tensor delta({in_features_, out_features_});
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = sigma_[i] * noise_[i];
  Tensor xs({batch, in_features_});
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = cached_input_[i] * sign_in_[i];
  Tensor perturb({batch, out_features_});
  matmul(false, false, batch, out_features_, in_features_, xs.data(), delta.data(), 0.0, perturb.data());
  const double b = bias.value[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += perturb[i] * sign_out_[i] + b;
  has_cache_ = true;
  return out;
}

Tensor FlipoutDenseLayer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_input_.dim(0);

  // d mu = x^T g
  matmul(true, false, in_features_, out_features_, batch, cached_input_.data(), upstream.data(), 0.0,
         weight_mu.grad.data());

  // d delta = (x o s_in)^T (g o s_out); d rho = d delta o E o sigmoid(rho)
  Tensor xs({batch, in_features_});
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = cached_input_[i] * sign_in_[i];
  Tensor gs({batch, out_features_});
  for (std::size_t i = 0; i < gs.size(); ++i) gs[i] = upstream[i] * sign_out_[i];
  Tensor ddelta({in_features_, out_features_});
  matmul(true, false, in_features_, out_features_, batch, xs.data(), gs.data(), 0.0, ddelta.data());
  for (std::size_t i = 0; i < ddelta.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-weight_rho.value[i]));
    weight_rho.grad[i] = ddelta[i] * noise_[i] * sig;
  }

  // scalar bias is added to every output element
  double db = 0.0;
  for (std::size_t i = 0; i < upstream.size(); ++i) db += upstream[i];
  bias.grad[0] = db;

  // dx = g mu^T + ((g o s_out)(sigma o E)^T) o s_in
  Tensor dx({batch, in_features_});
  matmul(false, true, batch, in_features_, out_features_, upstream.data(), weight_mu.value.data(), 0.0,
         dx.data());
  Tensor delta({in_features_, out_features_});
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = sigma_[i] * noise_[i];
  Tensor dxs({batch, in_features_});
  matmul(false, true, batch, in_features_, out_features_, gs.data(), delta.data(), 0.0, dxs.data());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxs[i] * sign_in_[i];
  return dx;
}

std::vector<std::size_t> FlipoutDenseLayer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], out_features_};
}

// ---------------------------------------------------------------- RBF output

RbfOutputLayer::RbfOutputLayer(std::string name, std::size_t in_features, std::size_t classes,
                               std::size_t centroid_dim, double length_scale_, RngStream& rng)
    : class_weights(name + ".class_weights", Tensor({classes, centroid_dim, in_features})),
      centroids(name + ".centroids", Tensor({classes, centroid_dim})),
      length_scale(length_scale_),
      in_features_(in_features),
      classes_(classes),
      centroid_dim_(centroid_dim) {
  if (length_scale <= 0.0) {
    throw std::invalid_argument("rbf_output: length scale must be positive");
  }
  for (std::size_t c = 0; c < classes; ++c) {
    Tensor block({centroid_dim, in_features});
    glorot_fill(block, in_features, centroid_dim, rng);
    std::copy(block.values().begin(), block.values().end(),
              class_weights.value.values().begin() + c * centroid_dim * in_features);
  }
  for (std::size_t i = 0; i < centroids.value.size(); ++i) centroids.value[i] = rng.normal(0.0, 0.05);
}

Tensor RbfOutputLayer::forward(const Tensor& input, Mode, RngStream*) {
  cached_input_ = as_matrix(input, in_features_, kind());
  const std::size_t batch = cached_input_.dim(0);
  cached_projected_ = Tensor({batch, classes_, centroid_dim_});
  cached_kernels_ = Tensor({batch, classes_});
  const double denom = 2.0 * static_cast<double>(centroid_dim_) * length_scale * length_scale;
  for (std::size_t c = 0; c < classes_; ++c) {
    const double* wc = class_weights.value.data() + c * centroid_dim_ * in_features_;
    // projected(b, c, :) = W_c x_b
    for (std::size_t n = 0; n < batch; ++n) {
      double* proj = cached_projected_.data() + (n * classes_ + c) * centroid_dim_;
      matmul(false, true, 1, centroid_dim_, in_features_, cached_input_.data() + n * in_features_, wc, 0.0,
             proj);
      double dist2 = 0.0;
      for (std::size_t k = 0; k < centroid_dim_; ++k) {
        const double d = proj[k] - centroids.value[c * centroid_dim_ + k];
        dist2 += d * d;
      }
      cached_kernels_.at(n, c) = std::exp(-dist2 / denom);
    }
  }
  has_cache_ = true;
  return cached_kernels_;
}

Tensor RbfOutputLayer::backward(const Tensor& upstream) {
  require_cache();
  const std::size_t batch = cached_input_.dim(0);
  const double denom = 2.0 * static_cast<double>(centroid_dim_) * length_scale * length_scale;
  std::fill(class_weights.grad.values().begin(), class_weights.grad.values().end(), 0.0);
  std::fill(centroids.grad.values().begin(), centroids.grad.values().end(), 0.0);
  Tensor dx({batch, in_features_});
  std::vector<double> dproj(centroid_dim_);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = cached_input_.data() + n * in_features_;
    for (std::size_t c = 0; c < classes_; ++c) {
      const double g = upstream.at(n, c);
      if (g == 0.0) continue;
      const double k_val = cached_kernels_.at(n, c);
      // dK/ddist2 = -K/denom; ddist2/dproj = 2 (proj - e)
      const double coeff = -g * k_val / denom * 2.0;
      const double* proj = cached_projected_.data() + (n * classes_ + c) * centroid_dim_;
      const double* e = centroids.value.data() + c * centroid_dim_;
      double* de = centroids.grad.data() + c * centroid_dim_;
      double* dw = class_weights.grad.data() + c * centroid_dim_ * in_features_;
      const double* wc = class_weights.value.data() + c * centroid_dim_ * in_features_;
      for (std::size_t k = 0; k < centroid_dim_; ++k) {
        dproj[k] = coeff * (proj[k] - e[k]);
        de[k] -= dproj[k];
      }
      // dW_c += dproj x^T; dx += W_c^T dproj
      for (std::size_t k = 0; k < centroid_dim_; ++k) {
        const double dp = dproj[k];
        if (dp == 0.0) continue;
        const double* wrow = wc + k * in_features_;
        double* dwrow = dw + k * in_features_;
        double* dxn = dx.data() + n * in_features_;
        for (std::size_t j = 0; j < in_features_; ++j) {
          dwrow[j] += dp * x[j];
          dxn[j] += dp * wrow[j];
        }
      }
    }
  }
  return dx;
}

std::vector<std::size_t> RbfOutputLayer::output_shape(const std::vector<std::size_t>& in) const {
  return {in[0], classes_};
}

}  // namespace uq::nn
