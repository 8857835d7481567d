#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "uqbench/layers.hpp"
#include "uqbench/losses.hpp"

using namespace uq;
using namespace uq::nn;

TEST_CASE("categorical CE is zero with zero gradient at a perfect prediction") {
  Tensor probs({2, 3}, std::vector<double>{1, 0, 0, 0, 0, 1});
  const LossGrad lg = categorical_cross_entropy(probs, {0, 2});
  CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t i = 0; i < lg.grad.size(); ++i) CHECK(lg.grad[i] == 0.0);
}

TEST_CASE("categorical CE of a uniform binary prediction is ln 2") {
  Tensor probs({1, 2}, std::vector<double>{0.5, 0.5});
  const LossGrad lg = categorical_cross_entropy(probs, {0});
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("categorical CE matches the direct -mean(log p) summation") {
  RngStream rng(101);
  const std::size_t batch = 8, classes = 5;
  SoftmaxLayer softmax;
  Tensor logits({batch, classes});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-2, 2);
  Tensor probs = softmax.forward(logits, Mode::kEval, nullptr);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(classes));

  double expected = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    expected -= std::log(probs.at(n, static_cast<std::size_t>(labels[n])));
  }
  expected /= static_cast<double>(batch);
  const LossGrad lg = categorical_cross_entropy(probs, labels);
  CHECK(std::abs(lg.loss - expected) < 1e-12);
}

TEST_CASE("categorical CE fused logit gradient equals the chained softmax route") {
  RngStream rng(103);
  const std::size_t batch = 4, classes = 6;
  SoftmaxLayer softmax;
  Tensor logits({batch, classes});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-3, 3);
  Tensor probs = softmax.forward(logits, Mode::kEval, nullptr);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(classes));

  const LossGrad fused = categorical_cross_entropy(probs, labels);
  // Unfused route: dL/dp = -onehot / (p * batch), then through the softmax Jacobian.
  Tensor dprobs({batch, classes});
  for (std::size_t n = 0; n < batch; ++n) {
    dprobs.at(n, static_cast<std::size_t>(labels[n])) =
        -1.0 / (probs.at(n, static_cast<std::size_t>(labels[n])) * static_cast<double>(batch));
  }
  const Tensor chained = softmax.backward(dprobs);
  for (std::size_t i = 0; i < chained.size(); ++i) {
    CHECK(fused.grad[i] == doctest::Approx(chained[i]).epsilon(1e-10));
  }
}

TEST_CASE("categorical CE rejects labels out of range") {
  Tensor probs({1, 2}, std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(categorical_cross_entropy(probs, {2}), std::out_of_range);
  CHECK_THROWS_AS(categorical_cross_entropy(probs, {-1}), std::out_of_range);
}

TEST_CASE("binary CE is near zero when outputs equal near-binary targets") {
  const double eps = 1e-7;
  Tensor outputs({1, 2}, std::vector<double>{eps, 1.0 - eps});
  Tensor targets({1, 2}, std::vector<double>{0.0, 1.0});
  const LossGrad lg = binary_cross_entropy(outputs, targets);
  CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("binary CE at maximal ignorance is ln 2") {
  Tensor outputs({2, 2}, 0.5);
  Tensor targets({2, 2}, std::vector<double>{1, 0, 0, 1});
  const LossGrad lg = binary_cross_entropy(outputs, targets);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("binary CE matches the elementwise summation oracle") {
  RngStream rng(107);
  Tensor outputs({3, 4});
  Tensor targets({3, 4});
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    outputs[i] = rng.uniform(0.05, 0.95);
    targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  double expected = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    expected -= targets[i] * std::log(outputs[i]) + (1.0 - targets[i]) * std::log(1.0 - outputs[i]);
  }
  expected /= static_cast<double>(outputs.size());
  CHECK(std::abs(binary_cross_entropy(outputs, targets).loss - expected) < 1e-12);
}

TEST_CASE("binary CE rejects outputs outside the unit interval") {
  Tensor targets({1, 1}, std::vector<double>{1.0});
  CHECK_THROWS_AS(binary_cross_entropy(Tensor({1, 1}, std::vector<double>{1.5}), targets),
                  std::invalid_argument);
  CHECK_THROWS_AS(binary_cross_entropy(Tensor({1, 1}, std::vector<double>{-0.2}), targets),
                  std::invalid_argument);
}

TEST_CASE("gaussian NLL hits its reference points") {
  Tensor y({1, 1}, std::vector<double>{0.7});

  // mean == target, unit variance -> 0
  CHECK(gaussian_nll(y, Tensor({1, 1}, 1.0), y).loss == doctest::Approx(0.0).epsilon(1e-12));

  // unit residual, unit variance -> 0.5
  Tensor mu({1, 1}, std::vector<double>{1.7});
  CHECK(gaussian_nll(mu, Tensor({1, 1}, 1.0), y).loss == doctest::Approx(0.5).epsilon(1e-12));

  // zero residual, variance e -> 0.5 log e = 0.5
  Tensor var_e({1, 1}, std::exp(1.0));
  CHECK(gaussian_nll(y, var_e, y).loss == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gaussian NLL rejects nonpositive variance") {
  Tensor y({1, 1}, 0.0);
  CHECK_THROWS_AS(gaussian_nll(y, Tensor({1, 1}, 0.0), y), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_nll(y, Tensor({1, 1}, -1.0), y), std::invalid_argument);
}

TEST_CASE("mean squared error averages over every element") {
  Tensor preds({2, 1}, std::vector<double>{1.0, 3.0});
  Tensor targets({2, 1}, std::vector<double>{0.0, 1.0});
  const LossGrad lg = mean_squared_error(preds, targets);
  CHECK(lg.loss == doctest::Approx((1.0 + 4.0) / 2.0));
  CHECK(lg.grad[0] == doctest::Approx(1.0));  // 2 * 1 / 2
  CHECK(lg.grad[1] == doctest::Approx(2.0));  // 2 * 2 / 2
}
