#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqbench/tensor.hpp"

namespace uq::data {

// Feature tensors plus integer class labels (classification) or real
// targets (regression).
struct LabeledDataset {
  Tensor features;          // (n, ...sample shape)
  std::vector<int> labels;  // classification labels in [0, num_classes)
  Tensor targets;           // regression targets (n, 1); empty otherwise
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return features.empty() ? 0 : features.dim(0); }
  bool regression() const { return !targets.empty(); }
  std::vector<std::size_t> sample_shape() const;

  // Gathers the given sample indices into a batch tensor.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  Tensor gather_targets(const std::vector<std::size_t>& indices) const;

  void validate() const;
};

// Two interleaved half-circles: outer arc (cos t, sin t), inner arc
// (1 - cos t, 0.5 - sin t), t in [0, pi], plus isotropic Gaussian noise.
// grid_spacing=true uses equally spaced t (the reference layout); otherwise
// t is drawn uniformly.
LabeledDataset make_two_moons(std::size_t n_per_class, double noise_std, std::uint64_t seed,
                              bool grid_spacing = false);

// Uniform 2D box; used as the synthetic out-of-distribution set.
LabeledDataset make_uniform_box(std::size_t n, double x_lo, double x_hi, double y_lo, double y_hi,
                                std::uint64_t seed);

// y = sin(x) + eps, eps ~ N(0, sigma(x)), sigma(x) = 0.15 / (1 + exp(-x)),
// x equally spaced over [-4, 4] inclusive.
LabeledDataset make_toy_regression(std::size_t n_samples, std::uint64_t seed);

double toy_regression_noise_std(double x);

inline constexpr double kToyRegressionTrainLo = -4.0;
inline constexpr double kToyRegressionTrainHi = 4.0;
inline constexpr double kToyRegressionEvalLo = -7.0;
inline constexpr double kToyRegressionEvalHi = 7.0;

// IDX container (big-endian magic 0x803 for images, 0x801 for labels).
// Pixels are scaled to [0,1]; image tensors are (n, 1, rows, cols).
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary records: 1 label byte + 3072 channel-major pixel bytes.
// Files are concatenated in order; tensors are (n, 3, 32, 32) scaled to [0,1].
LabeledDataset load_cifar10_binary(const std::vector<std::string>& paths);

// Draws exactly `spc` samples per class without replacement, deterministic
// in `seed`. Output is grouped by class with randomized order inside each
// class.
LabeledDataset subsample_per_class(const LabeledDataset& data, std::size_t spc, std::uint64_t seed);

}  // namespace uq::data
