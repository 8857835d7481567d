#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uqbench/methods.hpp"
#include "uqbench/metrics.hpp"

using namespace uq;
using namespace uq::metrics;

namespace {

// All-pairs counting definition of the AUC, ties at one half.
double auc_bruteforce(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) {
      if (p > n) wins += 1.0;
      else if (p == n) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Independent equal-width binning implementation of the calibration error.
double ece_bruteforce(const std::vector<double>& conf, const std::vector<bool>& correct,
                      std::size_t n_bins) {
  double ece = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(n_bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    double conf_sum = 0.0, acc_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const bool in_bin = (b == 0) ? (conf[i] <= hi) : (conf[i] > lo && conf[i] <= hi);
      if (!in_bin) continue;
      ++count;
      conf_sum += conf[i];
      acc_sum += correct[i] ? 1.0 : 0.0;
    }
    if (count == 0) continue;
    ece += static_cast<double>(count) / static_cast<double>(conf.size()) *
           std::abs(acc_sum / count - conf_sum / count);
  }
  return ece;
}

methods::PredictionSet random_prediction_set(std::size_t n, std::size_t classes, RngStream& rng) {
  methods::PredictionSet pred;
  pred.probs = Tensor({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      pred.probs.at(i, c) = rng.uniform(0.01, 1.0);
      sum += pred.probs.at(i, c);
    }
    for (std::size_t c = 0; c < classes; ++c) pred.probs.at(i, c) /= sum;
  }
  return pred;
}

}  // namespace

TEST_CASE("entropy reference values") {
  CHECK(entropy({1, 0, 0, 0}) == 0.0);
  std::vector<double> uniform10(10, 0.1);
  CHECK(entropy(uniform10) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  const std::vector<double> p{0.7, 0.2, 0.1};
  const double direct = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  CHECK(entropy(p) == doctest::Approx(direct).epsilon(1e-15));
  CHECK(entropy(p) == doctest::Approx(0.8018).epsilon(1e-4));
  CHECK_THROWS_AS(entropy({-0.1, 1.1}), std::invalid_argument);
}

TEST_CASE("entropy and max_prob stay within their bounds on random vectors") {
  RngStream rng(211);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t classes = 2 + rng.uniform_index(9);
    std::vector<double> p(classes);
    double sum = 0.0;
    for (auto& v : p) {
      v = rng.uniform(0.0, 1.0);
      sum += v;
    }
    for (auto& v : p) v /= sum;
    const double h = entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(classes)) + 1e-12);
    const double mp = max_prob(p);
    CHECK(mp >= 1.0 / static_cast<double>(classes) - 1e-12);
    CHECK(mp <= 1.0);
  }
}

TEST_CASE("max_prob reference values and scan oracle") {
  CHECK(max_prob({0.5, 0.5}) == 0.5);
  std::vector<double> uniform(8, 0.125);
  CHECK(max_prob(uniform) == doctest::Approx(0.125));
  RngStream rng(223);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(5);
    for (auto& x : v) x = rng.uniform(0, 1);
    double best = v[0];
    for (double x : v) best = std::max(best, x);
    CHECK(max_prob(v) == best);
  }
}

TEST_CASE("perfectly confident and correct predictions have zero calibration error") {
  std::vector<double> conf(10, 1.0);
  std::vector<bool> correct(10, true);
  CHECK(ece_from_confidence(conf, correct).ece == 0.0);
}

TEST_CASE("two samples at confidence 0.9 with one correct give ECE 0.4") {
  const EceReport report = ece_from_confidence({0.9, 0.9}, {true, false});
  CHECK(report.ece == doctest::Approx(0.4).epsilon(1e-12));
  std::size_t occupied = 0;
  for (const auto& bin : report.bins) occupied += bin.count > 0;
  CHECK(occupied == 1);
}

TEST_CASE("calibrated bins give zero ECE") {
  // Four samples in one bin at confidence 0.75, three of four correct.
  const EceReport report =
      ece_from_confidence({0.75, 0.75, 0.75, 0.75}, {true, true, true, false});
  CHECK(report.ece == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ece report is internally consistent and counts cover the samples") {
  RngStream rng(227);
  std::vector<double> conf(40);
  std::vector<bool> correct(40);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = rng.uniform(0, 1);
    correct[i] = rng.bernoulli(0.7);
  }
  const EceReport report = ece_from_confidence(conf, correct);
  std::size_t total = 0;
  double recomputed = 0.0;
  for (const auto& bin : report.bins) {
    total += bin.count;
    if (bin.count > 0) {
      recomputed += static_cast<double>(bin.count) / static_cast<double>(conf.size()) *
                    std::abs(bin.accuracy - bin.mean_confidence);
    }
  }
  CHECK(total == conf.size());
  CHECK(std::abs(recomputed - report.ece) < 1e-12);
}

TEST_CASE("ece matches the brute-force binning oracle on 200 random instances") {
  RngStream rng(229);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(200);
    std::vector<double> conf(n);
    std::vector<bool> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = rng.uniform(0, 1);
      correct[i] = rng.bernoulli(0.6);
    }
    const std::size_t bins = 1 + rng.uniform_index(20);
    CHECK(ece_from_confidence(conf, correct, bins).ece == ece_bruteforce(conf, correct, bins));
  }
}

TEST_CASE("ece is invariant under sample permutation") {
  RngStream rng(233);
  std::vector<double> conf(25);
  std::vector<bool> correct(25);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = rng.uniform(0, 1);
    correct[i] = rng.bernoulli(0.5);
  }
  const double base = ece_from_confidence(conf, correct).ece;
  std::vector<std::size_t> order(conf.size());
  std::iota(order.begin(), order.end(), 0);
  fisher_yates_shuffle(order, rng);
  std::vector<double> conf2(conf.size());
  std::vector<bool> correct2(conf.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    conf2[i] = conf[order[i]];
    correct2[i] = correct[order[i]];
  }
  CHECK(ece_from_confidence(conf2, correct2).ece == base);
}

TEST_CASE("roc_auc reference values") {
  CHECK(roc_auc({0.9, 0.8}, {0.2, 0.1}, Orientation::kHigherIsPositive) == 1.0);
  CHECK(roc_auc({0.3, 0.7}, {0.3, 0.7}, Orientation::kHigherIsPositive) == 0.5);
  CHECK(roc_auc({0.9, 0.4}, {0.5, 0.1}, Orientation::kHigherIsPositive) ==
        doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(roc_auc({}, {0.1}, Orientation::kHigherIsPositive), std::invalid_argument);
  CHECK_THROWS_AS(roc_auc({0.1}, {}, Orientation::kHigherIsPositive), std::invalid_argument);
}

TEST_CASE("roc_auc matches all-pairs counting on 200 random instances") {
  RngStream rng(239);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n1 = 1 + rng.uniform_index(200);
    const std::size_t n0 = 1 + rng.uniform_index(200);
    std::vector<double> pos(n1), neg(n0);
    // quantized scores force plenty of ties
    for (auto& v : pos) v = std::round(rng.uniform(0, 1) * 8) / 8.0;
    for (auto& v : neg) v = std::round(rng.uniform(0, 1) * 8) / 8.0;
    const double fast = roc_auc(pos, neg, Orientation::kHigherIsPositive);
    CHECK(std::abs(fast - auc_bruteforce(pos, neg)) < 1e-12);
  }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
  RngStream rng(241);
  std::vector<double> pos(30), neg(40);
  for (auto& v : pos) v = rng.uniform(0, 1);
  for (auto& v : neg) v = rng.uniform(0, 1);
  const double base = roc_auc(pos, neg, Orientation::kHigherIsPositive);
  auto transform = [&](auto f) {
    std::vector<double> p2(pos.size()), n2(neg.size());
    std::transform(pos.begin(), pos.end(), p2.begin(), f);
    std::transform(neg.begin(), neg.end(), n2.begin(), f);
    return roc_auc(p2, n2, Orientation::kHigherIsPositive);
  };
  CHECK(std::abs(transform([](double x) { return std::exp(x); }) - base) < 1e-12);
  CHECK(std::abs(transform([](double x) { return 3.5 * x + 11.0; }) - base) < 1e-12);
}

TEST_CASE("roc_auc complements when the sides swap") {
  RngStream rng(251);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(1 + rng.uniform_index(50)), b(1 + rng.uniform_index(50));
    for (auto& v : a) v = std::round(rng.uniform(0, 1) * 4) / 4.0;
    for (auto& v : b) v = std::round(rng.uniform(0, 1) * 4) / 4.0;
    const double ab = roc_auc(a, b, Orientation::kHigherIsPositive);
    const double ba = roc_auc(b, a, Orientation::kHigherIsPositive);
    CHECK(std::abs(ab - (1.0 - ba)) < 1e-12);
  }
}

TEST_CASE("ood_suite on identical test and ood prediction sets gives exactly 0.5") {
  RngStream rng(257);
  methods::PredictionSet train = random_prediction_set(20, 3, rng);
  methods::PredictionSet test = random_prediction_set(25, 3, rng);
  const OodSuiteResult r = ood_suite(train, test, test);
  CHECK(r.test_vs_ood_entropy == 0.5);
  CHECK(r.test_vs_ood_maxprob == 0.5);
}

TEST_CASE("uniformly higher OOD entropy drives the entropy AUC to 1") {
  methods::PredictionSet test, ood, train;
  // test rows are confident, ood rows are uniform
  test.probs = Tensor({3, 2}, std::vector<double>{0.99, 0.01, 0.98, 0.02, 0.97, 0.03});
  ood.probs = Tensor({3, 2}, std::vector<double>{0.5, 0.5, 0.51, 0.49, 0.52, 0.48});
  train.probs = test.probs;
  const OodSuiteResult r = ood_suite(train, test, ood);
  CHECK(r.test_vs_ood_entropy == 1.0);
}

TEST_CASE("ood_suite composes exactly from six independent roc_auc calls") {
  RngStream rng(263);
  methods::PredictionSet train = random_prediction_set(15, 4, rng);
  methods::PredictionSet test = random_prediction_set(18, 4, rng);
  methods::PredictionSet ood = random_prediction_set(21, 4, rng);
  const OodSuiteResult r = ood_suite(train, test, ood);

  auto entropies = [](const methods::PredictionSet& p) {
    std::vector<double> h(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) h[i] = entropy_row(p.probs, i);
    return h;
  };
  auto maxprobs = [](const methods::PredictionSet& p) {
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = p.maxprob_score(i);
    return m;
  };
  CHECK(std::abs(r.test_vs_ood_entropy - roc_auc(entropies(ood), entropies(test),
                                                 Orientation::kHigherIsPositive)) < 1e-12);
  CHECK(std::abs(r.train_vs_ood_entropy - roc_auc(entropies(ood), entropies(train),
                                                  Orientation::kHigherIsPositive)) < 1e-12);
  CHECK(std::abs(r.train_vs_test_entropy - roc_auc(entropies(test), entropies(train),
                                                   Orientation::kHigherIsPositive)) < 1e-12);
  CHECK(std::abs(r.test_vs_ood_maxprob -
                 roc_auc(maxprobs(ood), maxprobs(test), Orientation::kLowerIsPositive)) < 1e-12);
  CHECK(std::abs(r.train_vs_ood_maxprob -
                 roc_auc(maxprobs(ood), maxprobs(train), Orientation::kLowerIsPositive)) < 1e-12);
  CHECK(std::abs(r.train_vs_test_maxprob -
                 roc_auc(maxprobs(test), maxprobs(train), Orientation::kLowerIsPositive)) < 1e-12);
}

TEST_CASE("gradient prediction sets skip entropy AUCs and use raw scores for maxprob") {
  RngStream rng(269);
  methods::PredictionSet train = random_prediction_set(12, 3, rng);
  methods::PredictionSet test = random_prediction_set(14, 3, rng);
  methods::PredictionSet ood = random_prediction_set(16, 3, rng);
  auto add_scores = [&](methods::PredictionSet& p) {
    std::vector<double> raw(p.size());
    for (auto& v : raw) v = rng.uniform(0, 10);
    p.raw_score = raw;
    p.confidence = methods::gradient_to_confidence(raw);
  };
  add_scores(train);
  add_scores(test);
  add_scores(ood);
  const OodSuiteResult r = ood_suite(train, test, ood);
  CHECK(std::isnan(r.test_vs_ood_entropy));
  CHECK(std::isnan(r.train_vs_ood_entropy));
  CHECK(std::isnan(r.train_vs_test_entropy));

  // Raw-score AUC equals union-normalized confidence AUC with flipped orientation.
  std::vector<double> joint = *test.raw_score;
  joint.insert(joint.end(), ood.raw_score->begin(), ood.raw_score->end());
  const std::vector<double> joint_conf = methods::gradient_to_confidence(joint);
  std::vector<double> conf_test(joint_conf.begin(), joint_conf.begin() + test.size());
  std::vector<double> conf_ood(joint_conf.begin() + test.size(), joint_conf.end());
  const double via_conf = roc_auc(conf_ood, conf_test, Orientation::kLowerIsPositive);
  CHECK(std::abs(r.test_vs_ood_maxprob - via_conf) < 1e-12);
}
