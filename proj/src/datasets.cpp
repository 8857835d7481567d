#include "uqbench/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "uqbench/rng.hpp"

namespace uq::data {

std::vector<std::size_t> LabeledDataset::sample_shape() const {
  std::vector<std::size_t> s(features.shape().begin() + 1, features.shape().end());
  return s;
}

Tensor LabeledDataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t stride = features.size() / features.dim(0);
  std::vector<std::size_t> shape = features.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.data() + i * stride, features.data() + indices[i] * stride, stride * sizeof(double));
  }
  return out;
}

Tensor LabeledDataset::gather_targets(const std::vector<std::size_t>& indices) const {
  Tensor out({indices.size(), 1});
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = targets[indices[i]];
  return out;
}

void LabeledDataset::validate() const {
  if (regression()) {
    if (targets.dim(0) != size()) {
      throw std::runtime_error("dataset '" + name + "': " + std::to_string(targets.dim(0)) +
                               " targets for " + std::to_string(size()) + " samples");
    }
    return;
  }
  if (labels.size() != size()) {
    throw std::runtime_error("dataset '" + name + "': " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(size()) + " samples");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::runtime_error("dataset '" + name + "': label " + std::to_string(label) +
                               " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset make_two_moons(std::size_t n_per_class, double noise_std, std::uint64_t seed,
                              bool grid_spacing) {
  if (n_per_class < 1) throw std::invalid_argument("make_two_moons: n_per_class must be >= 1");
  if (noise_std < 0.0) throw std::invalid_argument("make_two_moons: noise_std must be >= 0");
  constexpr double pi = 3.14159265358979323846;
  RngStream rng(seed);
  const std::size_t n = 2 * n_per_class;
  LabeledDataset ds;
  ds.features = Tensor({n, 2});
  ds.labels.resize(n);
  ds.num_classes = 2;
  ds.name = "two_moons";
  for (std::size_t i = 0; i < n_per_class; ++i) {
    const double t = grid_spacing
                         ? (n_per_class == 1 ? 0.0 : pi * static_cast<double>(i) / (n_per_class - 1))
                         : rng.uniform(0.0, pi);
    ds.features.at(i, 0) = std::cos(t);
    ds.features.at(i, 1) = std::sin(t);
    ds.labels[i] = 0;
  }
  for (std::size_t i = 0; i < n_per_class; ++i) {
    const double t = grid_spacing
                         ? (n_per_class == 1 ? 0.0 : pi * static_cast<double>(i) / (n_per_class - 1))
                         : rng.uniform(0.0, pi);
    ds.features.at(n_per_class + i, 0) = 1.0 - std::cos(t);
    ds.features.at(n_per_class + i, 1) = 0.5 - std::sin(t);
    ds.labels[n_per_class + i] = 1;
  }
  if (noise_std > 0.0) {
    for (std::size_t i = 0; i < ds.features.size(); ++i) {
      ds.features[i] += rng.normal(0.0, noise_std);
    }
  }
  return ds;
}

LabeledDataset make_uniform_box(std::size_t n, double x_lo, double x_hi, double y_lo, double y_hi,
                                std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_uniform_box: n must be >= 1");
  RngStream rng(seed);
  LabeledDataset ds;
  ds.features = Tensor({n, 2});
  ds.labels.assign(n, 0);
  ds.num_classes = 2;
  ds.name = "uniform_box";
  for (std::size_t i = 0; i < n; ++i) {
    ds.features.at(i, 0) = rng.uniform(x_lo, x_hi);
    ds.features.at(i, 1) = rng.uniform(y_lo, y_hi);
  }
  return ds;
}

double toy_regression_noise_std(double x) { return 0.15 / (1.0 + std::exp(-x)); }

LabeledDataset make_toy_regression(std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("make_toy_regression: need at least 2 samples");
  RngStream rng(seed);
  LabeledDataset ds;
  ds.features = Tensor({n_samples, 1});
  ds.targets = Tensor({n_samples, 1});
  ds.name = "toy_regression";
  const double step = (kToyRegressionTrainHi - kToyRegressionTrainLo) / static_cast<double>(n_samples - 1);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x = kToyRegressionTrainLo + step * static_cast<double>(i);
    ds.features[i] = x;
    ds.targets[i] = std::sin(x) + rng.normal(0.0, toy_regression_noise_std(x));
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open: " + path);
  const std::streamsize size = is.tellg();
  is.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  is.read(reinterpret_cast<char*>(buf.data()), size);
  if (!is) throw std::runtime_error("read failed: " + path);
  return buf;
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > buf.size()) throw std::runtime_error("truncated IDX file: " + path);
  return (static_cast<std::uint32_t>(buf[offset]) << 24) |
         (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) | static_cast<std::uint32_t>(buf[offset + 3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img_buf = read_file(images_path);
  const auto lbl_buf = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img_buf, 0, images_path);
  if (img_magic != 0x00000803u) {
    throw std::runtime_error("bad IDX image magic in " + images_path + " (expected 0x00000803)");
  }
  const std::uint32_t lbl_magic = read_be32(lbl_buf, 0, labels_path);
  if (lbl_magic != 0x00000801u) {
    throw std::runtime_error("bad IDX label magic in " + labels_path + " (expected 0x00000801)");
  }
  const std::uint32_t n = read_be32(img_buf, 4, images_path);
  const std::uint32_t rows = read_be32(img_buf, 8, images_path);
  const std::uint32_t cols = read_be32(img_buf, 12, images_path);
  const std::uint32_t n_labels = read_be32(lbl_buf, 4, labels_path);
  if (n != n_labels) {
    throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
  if (img_buf.size() < 16 + pixels) throw std::runtime_error("truncated IDX file: " + images_path);
  if (lbl_buf.size() < 8 + n) throw std::runtime_error("truncated IDX file: " + labels_path);

  LabeledDataset ds;
  ds.name = images_path;
  ds.features = Tensor({n, 1, rows, cols});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < pixels; ++i) {
    ds.features[i] = static_cast<double>(img_buf[16 + i]) / 255.0;
  }
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(lbl_buf[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

LabeledDataset load_cifar10_binary(const std::vector<std::string>& paths) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  std::vector<unsigned char> all;
  for (const auto& path : paths) {
    auto buf = read_file(path);
    if (buf.size() % kRecord != 0) {
      throw std::runtime_error("CIFAR-10 file size " + std::to_string(buf.size()) +
                               " is not a multiple of 3073: " + path);
    }
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const std::size_t n = all.size() / kRecord;
  LabeledDataset ds;
  ds.name = paths.empty() ? "cifar10" : paths.front();
  ds.num_classes = 10;
  ds.labels.resize(n);
  if (n == 0) {
    ds.features = Tensor();
    return ds;
  }
  ds.features = Tensor({n, 3, 32, 32});
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = all.data() + r * kRecord;
    ds.labels[r] = static_cast<int>(rec[0]);
    double* dst = ds.features.data() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i) dst[i] = static_cast<double>(rec[1 + i]) / 255.0;
  }
  return ds;
}

LabeledDataset subsample_per_class(const LabeledDataset& data, std::size_t spc, std::uint64_t seed) {
  if (data.regression()) {
    throw std::invalid_argument("subsample_per_class: classification datasets only");
  }
  data.validate();
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  RngStream rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(spc * data.num_classes);
  for (std::size_t c = 0; c < data.num_classes; ++c) {
    if (by_class[c].size() < spc) {
      throw std::runtime_error("subsample_per_class: class " + std::to_string(c) + " has only " +
                               std::to_string(by_class[c].size()) + " samples, need " +
                               std::to_string(spc));
    }
    fisher_yates_shuffle(by_class[c], rng);
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + spc);
  }
  LabeledDataset out;
  out.name = data.name + "@spc" + std::to_string(spc);
  out.num_classes = data.num_classes;
  out.features = data.gather(chosen);
  out.labels.reserve(chosen.size());
  for (std::size_t idx : chosen) out.labels.push_back(data.labels[idx]);
  return out;
}

}  // namespace uq::data
