#include "uqbench/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace uq::nn {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv3x3: return "conv2d_3x3";
    case LayerKind::kMaxPool2x2: return "maxpool_2x2";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kSoftplus: return "softplus";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kDropConnect: return "dropconnect";
    case LayerKind::kFlipoutDense: return "flipout_dense";
    case LayerKind::kRbfOutput: return "rbf_output";
  }
  return "?";
}

namespace {

std::size_t feature_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

std::unique_ptr<Layer> build_layer(const LayerSpec& ls, const std::string& name,
                                   std::vector<std::size_t>& shape, RngStream& rng) {
  const std::size_t features = feature_count(shape);
  std::unique_ptr<Layer> layer;
  switch (ls.kind) {
    case LayerKind::kDense:
      layer = std::make_unique<DenseLayer>(name, features, ls.units, rng);
      break;
    case LayerKind::kConv3x3:
      if (shape.size() != 4) {
        throw std::invalid_argument("conv2d_3x3 needs a rank-4 input, has " + shape_to_string(shape));
      }
      layer = std::make_unique<Conv3x3Layer>(name, shape[1], ls.units, rng);
      break;
    case LayerKind::kMaxPool2x2:
      layer = std::make_unique<MaxPool2x2Layer>();
      break;
    case LayerKind::kBatchNorm:
      layer = std::make_unique<BatchNormLayer>(name, shape[1]);
      break;
    case LayerKind::kRelu:
      layer = std::make_unique<ReluLayer>();
      break;
    case LayerKind::kSoftmax:
      layer = std::make_unique<SoftmaxLayer>();
      break;
    case LayerKind::kSoftplus:
      layer = std::make_unique<SoftplusLayer>();
      break;
    case LayerKind::kDropout:
      layer = std::make_unique<DropoutLayer>(ls.drop_prob);
      break;
    case LayerKind::kDropConnect:
      layer = std::make_unique<DropConnectLayer>(name, features, ls.units, ls.drop_prob, rng);
      break;
    case LayerKind::kFlipoutDense:
      layer = std::make_unique<FlipoutDenseLayer>(name, features, ls.units, rng);
      break;
    case LayerKind::kRbfOutput: {
      const std::size_t dim = ls.centroid_dim ? ls.centroid_dim : features;
      layer = std::make_unique<RbfOutputLayer>(name, features, ls.units, dim, ls.length_scale, rng);
      break;
    }
  }
  std::vector<std::size_t> in_shape = shape;
  // Dense-like layers flatten trailing dims.
  if (ls.kind == LayerKind::kDense || ls.kind == LayerKind::kDropConnect ||
      ls.kind == LayerKind::kFlipoutDense || ls.kind == LayerKind::kRbfOutput) {
    in_shape = {shape[0], features};
  }
  shape = layer->output_shape(in_shape);
  return layer;
}

// Builds layers in order, advancing `shape` to the section's output shape.
void build_section(const std::vector<LayerSpec>& specs, const char* section,
                   std::vector<std::unique_ptr<Layer>>& out, std::vector<std::size_t>& shape,
                   RngStream& rng) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string name = std::string(section) + std::to_string(i) + "." +
                             layer_kind_name(specs[i].kind);
    out.push_back(build_layer(specs[i], name, shape, rng));
  }
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  if (spec_.input_shape.empty()) {
    throw std::invalid_argument("ModelSpec: input shape must not be empty");
  }
  RngStream rng(init_seed);
  std::vector<std::size_t> shape;
  shape.push_back(1);  // placeholder batch dim
  shape.insert(shape.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  build_section(spec_.trunk, "trunk", trunk_, shape, rng);

  if (spec_.output == OutputKind::kRegressionMean || spec_.output == OutputKind::kRegressionMeanVar) {
    // `shape` now holds the trunk output shape; both heads branch from it.
    std::vector<std::size_t> mean_shape = shape;
    build_section(spec_.mean_head, "mean_head", mean_head_, mean_shape, rng);
    if (spec_.output == OutputKind::kRegressionMeanVar) {
      std::vector<std::size_t> var_shape = shape;
      build_section(spec_.var_head, "var_head", var_head_, var_shape, rng);
      if (var_head_.empty()) {
        throw std::invalid_argument("ModelSpec: two-headed regression requires a variance head");
      }
    }
    if (mean_head_.empty()) {
      throw std::invalid_argument("ModelSpec: regression requires a mean head");
    }
  }
}

Tensor Model::run(std::vector<std::unique_ptr<Layer>>& layers, const Tensor& input, Mode mode,
                  RngStream* rng, const char* section) {
  Tensor cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      cur = layers[i]->forward(cur, mode, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(section) + " layer " + std::to_string(i) + " (" +
                               layers[i]->kind() + "): " + e.what());
    }
  }
  return cur;
}

Tensor Model::run_backward(std::vector<std::unique_ptr<Layer>>& layers, Tensor grad,
                           std::size_t skip_last) {
  for (std::size_t i = layers.size() - skip_last; i-- > 0;) {
    grad = layers[i]->backward(grad);
  }
  return grad;
}

Tensor Model::forward(const Tensor& batch, Mode mode, RngStream* rng) {
  Tensor features = run(trunk_, batch, mode, rng, "trunk");
  switch (spec_.output) {
    case OutputKind::kSoftmaxProbs:
    case OutputKind::kRbfKernels:
      return features;
    case OutputKind::kRegressionMean:
      return run(mean_head_, features, mode, rng, "mean_head");
    case OutputKind::kRegressionMeanVar: {
      const Tensor mean = run(mean_head_, features, mode, rng, "mean_head");
      const Tensor var = run(var_head_, features, mode, rng, "var_head");
      const std::size_t batch_n = mean.dim(0);
      Tensor out({batch_n, 2});
      for (std::size_t n = 0; n < batch_n; ++n) {
        out.at(n, 0) = mean[n];
        out.at(n, 1) = var[n];
      }
      return out;
    }
  }
  throw std::logic_error("Model::forward: unknown output kind");
}

Tensor Model::backward(const Tensor& upstream) {
  switch (spec_.output) {
    case OutputKind::kSoftmaxProbs:
    case OutputKind::kRbfKernels:
      return run_backward(trunk_, upstream);
    case OutputKind::kRegressionMean: {
      Tensor g = run_backward(mean_head_, upstream);
      return run_backward(trunk_, std::move(g));
    }
    case OutputKind::kRegressionMeanVar: {
      const std::size_t batch_n = upstream.dim(0);
      Tensor g_mean({batch_n, 1});
      Tensor g_var({batch_n, 1});
      for (std::size_t n = 0; n < batch_n; ++n) {
        g_mean[n] = upstream.at(n, 0);
        g_var[n] = upstream.at(n, 1);
      }
      Tensor d_mean = run_backward(mean_head_, std::move(g_mean));
      Tensor d_var = run_backward(var_head_, std::move(g_var));
      for (std::size_t i = 0; i < d_mean.size(); ++i) d_mean[i] += d_var[i];
      return run_backward(trunk_, std::move(d_mean));
    }
  }
  throw std::logic_error("Model::backward: unknown output kind");
}

Tensor Model::backward_from_logits(const Tensor& upstream) {
  if (spec_.output != OutputKind::kSoftmaxProbs) {
    throw std::logic_error("backward_from_logits: model does not end in softmax");
  }
  if (trunk_.empty() || std::string(trunk_.back()->kind()) != "softmax") {
    throw std::logic_error("backward_from_logits: final trunk layer is not softmax");
  }
  return run_backward(trunk_, upstream, /*skip_last=*/1);
}

std::vector<Param*> Model::trainable() {
  std::vector<Param*> out;
  for (auto& l : trunk_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  for (auto& l : mean_head_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  for (auto& l : var_head_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<Param*> Model::all_tensors() {
  std::vector<Param*> out = trainable();
  for (auto& l : trunk_) {
    for (Param* p : l->state()) out.push_back(p);
  }
  for (auto& l : mean_head_) {
    for (Param* p : l->state()) out.push_back(p);
  }
  for (auto& l : var_head_) {
    for (Param* p : l->state()) out.push_back(p);
  }
  return out;
}

void Model::set_stochastic_eval(bool on) {
  for (auto& l : trunk_) l->set_stochastic_eval(on);
  for (auto& l : mean_head_) l->set_stochastic_eval(on);
  for (auto& l : var_head_) l->set_stochastic_eval(on);
}

std::size_t Model::count_layers(LayerKind kind) const {
  const char* name = layer_kind_name(kind);
  std::size_t count = 0;
  for (const auto& l : trunk_) {
    if (std::string(l->kind()) == name) ++count;
  }
  for (const auto& l : mean_head_) {
    if (std::string(l->kind()) == name) ++count;
  }
  for (const auto& l : var_head_) {
    if (std::string(l->kind()) == name) ++count;
  }
  return count;
}

Layer* Model::output_layer() {
  if (trunk_.empty()) throw std::logic_error("Model: empty trunk");
  return trunk_.back().get();
}

// ------------------------------------------------------------- snapshots

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight snapshots assume a little-endian host");

void write_u32(std::ofstream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& is, const std::string& path) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("weight snapshot truncated: " + path);
  return v;
}

}  // namespace

void save_weights(Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("UQW1", 4);
  for (Param* p : model.all_tensors()) {
    write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u32(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void load_weights(Model& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "UQW1", 4) != 0) {
    throw std::runtime_error("not a weight snapshot (bad magic): " + path);
  }
  for (Param* p : model.all_tensors()) {
    const std::uint32_t name_len = read_u32(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p->name) {
      throw std::runtime_error("weight snapshot mismatch: expected tensor '" + p->name + "', found '" +
                               name + "' in " + path);
    }
    const std::uint32_t rank = read_u32(is, path);
    if (rank != p->value.rank()) {
      throw std::runtime_error("weight snapshot rank mismatch for " + p->name + " in " + path);
    }
    for (std::size_t d = 0; d < rank; ++d) {
      if (read_u32(is, path) != p->value.dim(d)) {
        throw std::runtime_error("weight snapshot dim mismatch for " + p->name + " in " + path);
      }
    }
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is) throw std::runtime_error("weight snapshot truncated: " + path);
  }
}

bool weights_equal(Model& a, Model& b) {
  auto ta = a.all_tensors();
  auto tb = b.all_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->name != tb[i]->name || !ta[i]->value.same_shape(tb[i]->value)) return false;
    if (std::memcmp(ta[i]->value.data(), tb[i]->value.data(), ta[i]->value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace uq::nn
