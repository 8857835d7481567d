#include "uqbench/tensor.hpp"

#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>

#ifdef UQB_HAVE_BLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int) __attribute__((weak));
#endif

namespace uq {

std::size_t Tensor::shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("Tensor: zero-sized dimension in " + shape_str());
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str() + " does not match value count " +
                                std::to_string(values_.size()));
  }
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_size(shape) != values_.size()) {
    throw std::invalid_argument("Tensor::reshaped: " + shape_to_string(shape) +
                                " incompatible with element count " + std::to_string(values_.size()));
  }
  return Tensor(std::move(shape), values_);
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

#ifdef UQB_HAVE_BLAS
// BLAS reductions must not spawn their own threads: parallelism lives at the
// trial level and per-thread GEMMs keep results reproducible.
void pin_blas_threads() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
  });
}
#else
void matmul_naive(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  const double* a, const double* b, double beta, double* c) {
  auto idx_a = [&](std::size_t i, std::size_t p) { return trans_a ? p * m + i : i * k + p; };
  auto idx_b = [&](std::size_t p, std::size_t j) { return trans_b ? j * k + p : p * n + j; };
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[idx_a(i, p)] * b[idx_b(p, j)];
      c[i * n + j] = beta * c[i * n + j] + acc;
    }
  }
}
#endif

}  // namespace

void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
            const double* a, const double* b, double beta, double* c) {
#ifdef UQB_HAVE_BLAS
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n), beta, c,
              static_cast<int>(n));
#else
  matmul_naive(trans_a, trans_b, m, n, k, a, b, beta, c);
#endif
}

}  // namespace uq
