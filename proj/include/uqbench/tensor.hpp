#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace uq {

// Dense row-major n-dimensional array of doubles; the single numeric carrier
// for activations, weights and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Rank-2 accessors (row, col).
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Reinterprets the buffer under a new shape with the same element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  std::string shape_str() const;

  static std::size_t shape_size(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

// c(m,n) = op_a(a) * op_b(b) + beta * c, where op_a(a) is m x k and op_b(b)
// is k x n. `a` is stored row-major with shape (m,k) when trans_a is false
// and (k,m) otherwise; likewise for `b`. Backed by BLAS when available.
void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
            const double* a, const double* b, double beta, double* c);

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace uq
