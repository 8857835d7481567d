#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "uqbench/methods.hpp"
#include "uqbench/metrics.hpp"

using namespace uq;
using namespace uq::methods;

namespace {

Tensor random_batch(std::size_t n, std::size_t features, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor t({n, features});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

MethodConfig config_for(Method m, double drop_prob = 0.25) {
  MethodConfig cfg;
  cfg.method = m;
  cfg.drop_prob = drop_prob;
  return cfg;
}

nn::Model build_classifier(Method m, std::uint64_t seed, double drop_prob = 0.25) {
  const MethodConfig cfg = config_for(m, drop_prob);
  return nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, cfg), seed);
}

void zero_params(nn::Model& model) {
  for (nn::Param* p : model.trainable()) {
    std::fill(p->value.values().begin(), p->value.values().end(), 0.0);
  }
}

}  // namespace

TEST_CASE("method configuration defaults and validation") {
  MethodConfig cfg;
  CHECK(cfg.mc_samples == 50);
  CHECK(cfg.drop_prob == 0.25);
  CHECK(cfg.ensemble_size == 5);
  CHECK(cfg.duq.length_scale == 0.1);

  cfg.mc_samples = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.mc_samples = 1;
  cfg.drop_prob = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.drop_prob = 0.25;
  cfg.ensemble_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("baseline prediction with zeroed output weights is uniform") {
  nn::Model model = build_classifier(Method::kBaseline, 5);
  zero_params(model);
  const PredictionSet pred = predict_baseline(model, random_batch(4, 2, 6));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    CHECK(pred.probs.at(i, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(pred.probs.at(i, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("baseline prediction maps identical inputs to identical rows") {
  nn::Model model = build_classifier(Method::kBaseline, 7);
  Tensor batch({3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    batch.at(i, 0) = 0.3;
    batch.at(i, 1) = -0.7;
  }
  const PredictionSet pred = predict_baseline(model, batch);
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(pred.probs.at(i, 0) == pred.probs.at(0, 0));
    CHECK(pred.probs.at(i, 1) == pred.probs.at(0, 1));
  }
}

TEST_CASE("baseline prediction equals a direct eval-mode forward pass") {
  nn::Model model = build_classifier(Method::kBaseline, 11);
  Tensor batch = random_batch(5, 2, 12);
  const PredictionSet pred = predict_baseline(model, batch);
  const Tensor direct = model.forward(batch, nn::Mode::kEval, nullptr);
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(std::abs(pred.probs[i] - direct[i]) < 1e-12);
  }
}

TEST_CASE("MC prediction with p=0 equals the baseline prediction") {
  for (Method m : {Method::kDropout, Method::kDropConnect}) {
    nn::Model stochastic = build_classifier(m, 13, 0.0);
    nn::Model plain = build_classifier(Method::kBaseline, 13);
    // Same init stream order only holds for dropconnect (same layer count);
    // copy weights over instead of relying on it.
    auto src = stochastic.trainable();
    auto dst = plain.trainable();
    REQUIRE(src.size() == dst.size());
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;

    Tensor batch = random_batch(6, 2, 14);
    RngStream rng(15);
    const PredictionSet mc = predict_mc(stochastic, batch, 50, m, rng);
    const PredictionSet base = predict_baseline(plain, batch);
    for (std::size_t i = 0; i < mc.probs.size(); ++i) {
      CHECK(std::abs(mc.probs[i] - base.probs[i]) < 1e-12);
    }
  }
}

TEST_CASE("MC prediction with M=1 equals one stochastic pass") {
  nn::Model model = build_classifier(Method::kDropout, 17);
  Tensor batch = random_batch(4, 2, 18);
  RngStream rng_a(19), rng_b(19);
  const PredictionSet mc = predict_mc(model, batch, 1, Method::kDropout, rng_a);

  RngStream pass = rng_b.split();
  model.set_stochastic_eval(true);
  const Tensor direct = model.forward(batch, nn::Mode::kEval, &pass);
  model.set_stochastic_eval(false);
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(mc.probs[i] == direct[i]);
}

TEST_CASE("MC prediction matches an independently scripted 50-pass average") {
  for (Method m : {Method::kDropout, Method::kDropConnect}) {
    nn::Model model = build_classifier(m, 23);
    Tensor batch = random_batch(5, 2, 24);
    RngStream rng_a(25), rng_b(25);
    const PredictionSet mc = predict_mc(model, batch, 50, m, rng_a);

    std::vector<RngStream> streams;
    for (std::size_t pass = 0; pass < 50; ++pass) streams.push_back(rng_b.split());
    Tensor sum({5, 2});
    model.set_stochastic_eval(true);
    for (std::size_t pass = 0; pass < 50; ++pass) {
      const Tensor out = model.forward(batch, nn::Mode::kEval, &streams[pass]);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += out[i];
    }
    model.set_stochastic_eval(false);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      CHECK(std::abs(mc.probs[i] - sum[i] / 50.0) < 1e-12);
    }
  }
}

TEST_CASE("MC prediction rejects models without the required stochastic layer") {
  nn::Model plain = build_classifier(Method::kBaseline, 29);
  Tensor batch = random_batch(2, 2, 30);
  RngStream rng(31);
  CHECK_THROWS_AS(predict_mc(plain, batch, 5, Method::kDropout, rng), std::runtime_error);
  CHECK_THROWS_AS(predict_mc(plain, batch, 5, Method::kDropConnect, rng), std::runtime_error);
  CHECK_THROWS_AS(predict_flipout(plain, batch, 5, rng), std::runtime_error);
}

TEST_CASE("more MC samples shrink the spread of the mean prediction") {
  nn::Model model = build_classifier(Method::kDropout, 37, 0.5);
  Tensor input = random_batch(1, 2, 38);
  RngStream rng(39);
  auto spread = [&](std::size_t samples) {
    const std::size_t reps = 50;
    std::vector<double> means;
    means.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      RngStream rep_rng = rng.split();
      means.push_back(predict_mc(model, input, samples, Method::kDropout, rep_rng).probs[0]);
    }
    double mu = 0.0;
    for (double v : means) mu += v;
    mu /= static_cast<double>(reps);
    double var = 0.0;
    for (double v : means) var += (v - mu) * (v - mu);
    return var / static_cast<double>(reps);
  };
  const double var5 = spread(5);
  const double var50 = spread(50);
  CHECK(var50 < 0.5 * var5);  // expected ratio is 10x; 0.5 leaves 3-sigma slack
}

TEST_CASE("an ensemble of identical members equals the single model") {
  const MethodConfig cfg = config_for(Method::kDeepEnsemble);
  const nn::ModelSpec spec = make_classifier_spec(Backbone::kMlp32, {2}, 2, cfg);
  std::vector<nn::Model> members;
  for (int i = 0; i < 3; ++i) members.emplace_back(spec, 41);  // same seed
  Tensor batch = random_batch(4, 2, 42);
  const PredictionSet ens = predict_ensemble(members, batch);
  const PredictionSet single = predict_baseline(members.front(), batch);
  for (std::size_t i = 0; i < ens.probs.size(); ++i) {
    CHECK(std::abs(ens.probs[i] - single.probs[i]) < 1e-12);
  }
}

TEST_CASE("two opposite hard members average to the uniform prediction") {
  const MethodConfig cfg = config_for(Method::kDeepEnsemble);
  const nn::ModelSpec spec = make_classifier_spec(Backbone::kMlp32, {2}, 2, cfg);
  std::vector<nn::Model> members;
  members.emplace_back(spec, 43);
  members.emplace_back(spec, 44);
  for (auto& member : members) zero_params(member);
  // Output biases push the softmax to an exact one-hot in double precision.
  members[0].trainable().back()->value = Tensor({2}, std::vector<double>{400.0, -400.0});
  members[1].trainable().back()->value = Tensor({2}, std::vector<double>{-400.0, 400.0});
  const PredictionSet ens = predict_ensemble(members, random_batch(3, 2, 45));
  for (std::size_t i = 0; i < ens.size(); ++i) {
    CHECK(ens.probs.at(i, 0) == 0.5);
    CHECK(ens.probs.at(i, 1) == 0.5);
  }
}

TEST_CASE("a five-member ensemble matches the scripted elementwise average") {
  const MethodConfig cfg = config_for(Method::kDeepEnsemble);
  const nn::ModelSpec spec = make_classifier_spec(Backbone::kMlp32, {2}, 2, cfg);
  std::vector<nn::Model> members;
  for (std::uint64_t i = 0; i < 5; ++i) members.emplace_back(spec, 50 + i);
  Tensor batch = random_batch(6, 2, 56);
  const PredictionSet ens = predict_ensemble(members, batch);
  Tensor expected({6, 2});
  for (auto& member : members) {
    const Tensor out = member.forward(batch, nn::Mode::kEval, nullptr);
    for (std::size_t i = 0; i < out.size(); ++i) expected[i] += out[i];
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(ens.probs[i] - expected[i] / 5.0) < 1e-12);
  }
}

TEST_CASE("ensemble members with different seeds actually differ") {
  const data::LabeledDataset blobs = data::make_two_moons(20, 0.1, 60);
  const MethodConfig cfg = config_for(Method::kDeepEnsemble);
  const nn::ModelSpec spec = make_classifier_spec(Backbone::kMlp32, {2}, 2, cfg);
  nn::TrainConfig tcfg;
  tcfg.epochs = 2;
  auto members = train_ensemble(spec, blobs, tcfg, 2, 61);
  CHECK(!nn::weights_equal(members[0], members[1]));
}

TEST_CASE("duq_to_probs reference values and underflow fallback") {
  Tensor kernels({2, 2}, std::vector<double>{1.0, 1.0, 0.8, 0.2});
  const Tensor probs = duq_to_probs(kernels);
  CHECK(probs.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(probs.at(1, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(probs.at(1, 1) == doctest::Approx(0.2).epsilon(1e-15));

  Tensor zero({1, 4});
  const Tensor uniform = duq_to_probs(zero);
  for (std::size_t c = 0; c < 4; ++c) CHECK(uniform.at(0, c) == 0.25);
}

TEST_CASE("duq_to_probs rows sum to one on random kernels") {
  RngStream rng(63);
  Tensor kernels({20, 5});
  for (std::size_t i = 0; i < kernels.size(); ++i) kernels[i] = rng.uniform(1e-6, 1.0);
  const Tensor probs = duq_to_probs(kernels);
  for (std::size_t n = 0; n < 20; ++n) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += probs.at(n, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("duq predictions keep kernels in (0,1] with consistent argmax") {
  MethodConfig cfg = config_for(Method::kDuq);
  nn::Model model(make_classifier_spec(Backbone::kMlp32, {2}, 3, cfg), 67);
  Tensor batch = random_batch(10, 2, 68);
  const Tensor kernels = duq_forward(model, batch);
  const PredictionSet pred = predict_duq(model, batch);
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    CHECK(kernels[i] > 0.0);
    CHECK(kernels[i] <= 1.0);
  }
  for (std::size_t n = 0; n < 10; ++n) {
    std::size_t arg_kernel = 0;
    for (std::size_t c = 1; c < 3; ++c) {
      if (kernels.at(n, c) > kernels.at(n, arg_kernel)) arg_kernel = c;
    }
    CHECK(static_cast<int>(arg_kernel) == pred.predicted_label(n));
    CHECK((*pred.max_kernel)[n] == kernels.at(n, arg_kernel));
  }
  CHECK(!pred.confidence.has_value());
}

TEST_CASE("duq_forward rejects plain softmax models") {
  nn::Model plain = build_classifier(Method::kBaseline, 69);
  CHECK_THROWS_AS(duq_forward(plain, random_batch(1, 2, 70)), std::runtime_error);
}

TEST_CASE("flipout prediction with zero posterior std equals the mean-weight softmax") {
  nn::Model model = build_classifier(Method::kFlipout, 71);
  // Force the posterior std to exactly zero.
  for (nn::Param* p : model.trainable()) {
    if (p->name.find("weight_rho") != std::string::npos) {
      std::fill(p->value.values().begin(), p->value.values().end(), -1000.0);
    }
  }
  Tensor batch = random_batch(4, 2, 72);
  RngStream rng(73);
  const PredictionSet mc = predict_flipout(model, batch, 50, rng);
  const Tensor direct = model.forward(batch, nn::Mode::kEval, &rng);
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::abs(mc.probs[i] - direct[i]) < 1e-12);
}

TEST_CASE("gradient aggregators match direct computation on v = [1, -2, 3]") {
  const std::vector<double> v{1.0, -2.0, 3.0};
  CHECK(aggregate_gradient(v, GradAggregator::kL1) == doctest::Approx(6.0));
  CHECK(aggregate_gradient(v, GradAggregator::kL2) == doctest::Approx(std::sqrt(14.0)));
  CHECK(aggregate_gradient(v, GradAggregator::kMean) == doctest::Approx(2.0 / 3.0));
  CHECK(aggregate_gradient(v, GradAggregator::kMin) == doctest::Approx(-2.0));
  CHECK(aggregate_gradient(v, GradAggregator::kMax) == doctest::Approx(3.0));
  // population std of {1,-2,3}: mean 2/3, var = ((1/3)^2+(8/3)^2+(7/3)^2)/3
  const double var = ((1.0 / 9.0) + (64.0 / 9.0) + (49.0 / 9.0)) / 3.0;
  CHECK(aggregate_gradient(v, GradAggregator::kStd) == doctest::Approx(std::sqrt(var)));
}

TEST_CASE("a saturated prediction yields an exactly zero gradient score") {
  nn::Model model = build_classifier(Method::kGradient, 77);
  zero_params(model);
  model.trainable().back()->value = Tensor({2}, std::vector<double>{400.0, -400.0});
  const std::vector<double> g =
      gradient_scores(model, random_batch(3, 2, 78), GradAggregator::kL1);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("identical samples receive identical gradient scores") {
  nn::Model model = build_classifier(Method::kGradient, 79);
  Tensor batch({3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    batch.at(i, 0) = 0.4;
    batch.at(i, 1) = -0.2;
  }
  const std::vector<double> g = gradient_scores(model, batch, GradAggregator::kL2);
  CHECK(g[0] > 0.0);
  CHECK(g[1] == g[0]);
  CHECK(g[2] == g[0]);
}

TEST_CASE("gradient min-max confidence endpoints") {
  const std::vector<double> p = gradient_to_confidence({0.0, 5.0, 10.0});
  CHECK(p[0] == 1.0);
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[2] == 0.0);

  const std::vector<double> constant = gradient_to_confidence({3.0, 3.0, 3.0});
  for (double v : constant) CHECK(v == 1.0);

  CHECK_THROWS_AS(gradient_to_confidence({}), std::invalid_argument);
}

TEST_CASE("gradient confidence spans [0,1] whenever the range is nonzero") {
  RngStream rng(83);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> g(2 + rng.uniform_index(40));
    for (auto& v : g) v = rng.uniform(0, 100);
    const std::vector<double> p = gradient_to_confidence(g);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    if (*std::max_element(g.begin(), g.end()) > *std::min_element(g.begin(), g.end())) {
      CHECK(*lo == 0.0);
      CHECK(*hi == 1.0);
    } else {
      CHECK(*lo == 1.0);
    }
  }
}

TEST_CASE("predict_gradient fills probs, raw scores, and confidence together") {
  nn::Model model = build_classifier(Method::kGradient, 89);
  Tensor batch = random_batch(6, 2, 90);
  const PredictionSet pred = predict_gradient(model, batch, GradAggregator::kL1);
  REQUIRE(pred.raw_score.has_value());
  REQUIRE(pred.confidence.has_value());
  CHECK(pred.raw_score->size() == 6);
  CHECK(!pred.has_entropy());
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK((*pred.confidence)[i] >= 0.0);
    CHECK((*pred.confidence)[i] <= 1.0);
    CHECK(pred.maxprob_score(i) == (*pred.confidence)[i]);
  }
  // probability rows still come from the softmax forward
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(pred.probs.at(i, 0) + pred.probs.at(i, 1) - 1.0) < 1e-12);
  }
}

TEST_CASE("classifier specs place the method-specific layers") {
  CHECK(nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, config_for(Method::kDropout)), 1)
            .count_layers(nn::LayerKind::kDropout) == 1);
  CHECK(nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, config_for(Method::kDropConnect)), 1)
            .count_layers(nn::LayerKind::kDropConnect) == 1);
  CHECK(nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, config_for(Method::kFlipout)), 1)
            .count_layers(nn::LayerKind::kFlipoutDense) == 1);
  CHECK(nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, config_for(Method::kDuq)), 1)
            .count_layers(nn::LayerKind::kRbfOutput) == 1);
  CHECK(nn::Model(make_classifier_spec(Backbone::kMlp32, {2}, 2, config_for(Method::kBaseline)), 1)
            .count_layers(nn::LayerKind::kSoftmax) == 1);
}

TEST_CASE("method and aggregator names round-trip through parsing") {
  for (Method m : {Method::kBaseline, Method::kDropout, Method::kDropConnect, Method::kDeepEnsemble,
                   Method::kDuq, Method::kFlipout, Method::kGradient}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  for (GradAggregator a : {GradAggregator::kL1, GradAggregator::kL2, GradAggregator::kMean,
                           GradAggregator::kStd, GradAggregator::kMin, GradAggregator::kMax}) {
    CHECK(parse_aggregator(aggregator_name(a)) == a);
  }
  CHECK_THROWS_AS(parse_method("nonsense"), std::invalid_argument);
  CHECK_THROWS_AS(parse_aggregator("nonsense"), std::invalid_argument);
}
