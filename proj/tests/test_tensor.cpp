#include "doctest.h"

#include <stdexcept>

#include "uqbench/rng.hpp"
#include "uqbench/tensor.hpp"

using uq::RngStream;
using uq::Tensor;

TEST_CASE("tensor shape and value count stay consistent") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == doctest::Approx(1.5));

  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
}

TEST_CASE("reshape preserves values and rejects bad sizes") {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == doctest::Approx(6.0));
  CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("matmul agrees with a hand-computed product") {
  // a = [[1,2,3],[4,5,6]], b = [[7,8],[9,10],[11,12]]
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const std::vector<double> b{7, 8, 9, 10, 11, 12};
  std::vector<double> c(4, 0.0);
  uq::matmul(false, false, 2, 2, 3, a.data(), b.data(), 0.0, c.data());
  CHECK(c[0] == doctest::Approx(58));
  CHECK(c[1] == doctest::Approx(64));
  CHECK(c[2] == doctest::Approx(139));
  CHECK(c[3] == doctest::Approx(154));
}

TEST_CASE("matmul transpose flags match explicit transposition") {
  RngStream rng(7);
  const std::size_t m = 4, n = 5, k = 3;
  std::vector<double> a(k * m), b(n * k);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  // c = a^T b^T where a is (k,m), b is (n,k)
  std::vector<double> c(m * n, 0.0);
  uq::matmul(true, true, m, n, k, a.data(), b.data(), 0.0, c.data());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double expect = 0.0;
      for (std::size_t p = 0; p < k; ++p) expect += a[p * m + i] * b[j * k + p];
      CHECK(c[i * n + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("rng streams are deterministic and split streams differ") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream parent(1);
  RngStream c1 = parent.split();
  RngStream c2 = parent.split();
  CHECK(c1.next_u64() != c2.next_u64());
}

TEST_CASE("rng uniform_index covers the range without bias artifacts") {
  RngStream rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[rng.uniform_index(5)];
  for (int c : counts) CHECK(c > 800);
}

TEST_CASE("seed derivation separates nearby inputs") {
  CHECK(uq::derive_seed(0, 1, 0) != uq::derive_seed(0, 0, 1));
  CHECK(uq::derive_seed(1, 5, 2) != uq::derive_seed(1, 5, 3));
  CHECK(uq::derive_seed(1, 5, 2) == uq::derive_seed(1, 5, 2));
}
