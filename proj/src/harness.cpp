#include "uqbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace uq::harness {

std::array<double, kMetricCount> TrialResult::as_array() const {
  return {acc,
          mean_entropy,
          mean_maxprob,
          train_ece,
          ece,
          ood_auc_entropy,
          ood_auc_maxprob,
          tr_test_auc_entropy,
          tr_test_auc_maxprob,
          tr_ood_auc_entropy,
          tr_ood_auc_maxprob};
}

void SweepPlan::validate() const {
  if (spc_values.empty()) throw std::invalid_argument("SweepPlan: no SPC values");
  if (trials < 1) throw std::invalid_argument("SweepPlan: trials must be >= 1");
  for (std::size_t i = 0; i < spc_values.size(); ++i) {
    if (spc_values[i] < 1) throw std::invalid_argument("SweepPlan: SPC values must be positive");
    if (i > 0 && spc_values[i] <= spc_values[i - 1]) {
      throw std::invalid_argument("SweepPlan: SPC values must be strictly increasing");
    }
  }
}

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t spc, std::size_t trial_index) {
  return derive_seed(base_seed, spc, trial_index);
}

namespace {

struct TrialPredictions {
  methods::PredictionSet train, test, ood;
};

TrialPredictions predict_all(const methods::MethodConfig& mcfg, methods::Backbone backbone,
                             const data::LabeledDataset& sub, const data::LabeledDataset& test_id,
                             const data::LabeledDataset& test_ood, std::uint64_t seed,
                             const nn::TrainConfig& tcfg) {
  using methods::Method;
  const nn::ModelSpec spec =
      methods::make_classifier_spec(backbone, sub.sample_shape(), sub.num_classes, mcfg);
  nn::TrainConfig cfg = tcfg;
  cfg.seed = derive_seed(seed, 3);
  const std::uint64_t init_seed = derive_seed(seed, 2);

  TrialPredictions out;
  switch (mcfg.method) {
    case Method::kBaseline: {
      nn::Model model(spec, init_seed);
      nn::train(model, sub, cfg);
      out.train = methods::predict_baseline(model, sub.features);
      out.test = methods::predict_baseline(model, test_id.features);
      out.ood = methods::predict_baseline(model, test_ood.features);
      break;
    }
    case Method::kDropout:
    case Method::kDropConnect: {
      nn::Model model(spec, init_seed);
      nn::train(model, sub, cfg);
      RngStream mc(derive_seed(seed, 4));
      out.train = methods::predict_mc(model, sub.features, mcfg.mc_samples, mcfg.method, mc);
      out.test = methods::predict_mc(model, test_id.features, mcfg.mc_samples, mcfg.method, mc);
      out.ood = methods::predict_mc(model, test_ood.features, mcfg.mc_samples, mcfg.method, mc);
      break;
    }
    case Method::kDeepEnsemble: {
      auto models = methods::train_ensemble(spec, sub, cfg, mcfg.ensemble_size, derive_seed(seed, 5));
      out.train = methods::predict_ensemble(models, sub.features);
      out.test = methods::predict_ensemble(models, test_id.features);
      out.ood = methods::predict_ensemble(models, test_ood.features);
      break;
    }
    case Method::kDuq: {
      nn::Model model(spec, init_seed);
      nn::train(model, sub, cfg);  // binary cross-entropy via the RBF output kind
      out.train = methods::predict_duq(model, sub.features);
      out.test = methods::predict_duq(model, test_id.features);
      out.ood = methods::predict_duq(model, test_ood.features);
      break;
    }
    case Method::kFlipout: {
      nn::Model model(spec, init_seed);
      nn::train(model, sub, cfg);
      RngStream mc(derive_seed(seed, 4));
      out.train = methods::predict_flipout(model, sub.features, mcfg.mc_samples, mc);
      out.test = methods::predict_flipout(model, test_id.features, mcfg.mc_samples, mc);
      out.ood = methods::predict_flipout(model, test_ood.features, mcfg.mc_samples, mc);
      break;
    }
    case Method::kGradient: {
      nn::Model model(spec, init_seed);
      nn::train(model, sub, cfg);
      out.train = methods::predict_gradient(model, sub.features, mcfg.aggregator);
      out.test = methods::predict_gradient(model, test_id.features, mcfg.aggregator);
      out.ood = methods::predict_gradient(model, test_ood.features, mcfg.aggregator);
      break;
    }
  }
  return out;
}

double mean_entropy_of(const methods::PredictionSet& pred) {
  if (!pred.has_entropy()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += metrics::entropy_row(pred.probs, i);
  return sum / static_cast<double>(pred.size());
}

double mean_maxprob_of(const methods::PredictionSet& pred) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += pred.maxprob_score(i);
  return sum / static_cast<double>(pred.size());
}

double ece_of(const methods::PredictionSet& pred, const std::vector<int>& labels) {
  if (pred.confidence) {
    std::vector<bool> correct(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) correct[i] = pred.predicted_label(i) == labels[i];
    return metrics::ece_from_confidence(*pred.confidence, correct).ece;
  }
  return metrics::ece_from_probs(pred.probs, labels).ece;
}

}  // namespace

TrialResult run_trial(const methods::MethodConfig& mcfg, methods::Backbone backbone,
                      const data::LabeledDataset& train_full, const data::LabeledDataset& test_id,
                      const data::LabeledDataset& test_ood, std::size_t spc, std::uint64_t seed,
                      const nn::TrainConfig& tcfg) {
  try {
    const data::LabeledDataset sub = data::subsample_per_class(train_full, spc, derive_seed(seed, 1));
    const TrialPredictions preds = predict_all(mcfg, backbone, sub, test_id, test_ood, seed, tcfg);

    TrialResult r;
    r.acc = metrics::accuracy(preds.test.probs, test_id.labels);
    r.mean_entropy = mean_entropy_of(preds.test);
    r.mean_maxprob = mean_maxprob_of(preds.test);
    r.train_ece = ece_of(preds.train, sub.labels);
    r.ece = ece_of(preds.test, test_id.labels);
    const metrics::OodSuiteResult aucs = metrics::ood_suite(preds.train, preds.test, preds.ood);
    r.ood_auc_entropy = aucs.test_vs_ood_entropy;
    r.ood_auc_maxprob = aucs.test_vs_ood_maxprob;
    r.tr_test_auc_entropy = aucs.train_vs_test_entropy;
    r.tr_test_auc_maxprob = aucs.train_vs_test_maxprob;
    r.tr_ood_auc_entropy = aucs.train_vs_ood_entropy;
    r.tr_ood_auc_maxprob = aucs.train_vs_ood_maxprob;
    return r;
  } catch (const std::exception& e) {
    throw std::runtime_error("method=" + std::string(methods::method_name(mcfg.method)) +
                             " spc=" + std::to_string(spc) + " seed=" + std::to_string(seed) + ": " +
                             e.what());
  }
}

SweepRow aggregate_trials(std::size_t spc, const std::vector<TrialResult>& trials) {
  if (trials.empty()) throw std::invalid_argument("aggregate_trials: no trials");
  SweepRow row;
  row.spc = spc;
  const double k = static_cast<double>(trials.size());
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    double mean = 0.0;
    for (const TrialResult& t : trials) mean += t.as_array()[f];
    mean /= k;
    double var = 0.0;
    for (const TrialResult& t : trials) {
      const double d = t.as_array()[f] - mean;
      var += d * d;
    }
    row.mean[f] = mean;
    row.stddev[f] = std::sqrt(var / k);  // population std
  }
  return row;
}

std::vector<SweepRow> run_sweep(const methods::MethodConfig& mcfg, methods::Backbone backbone,
                                const data::LabeledDataset& train_full,
                                const data::LabeledDataset& test_id,
                                const data::LabeledDataset& test_ood, const SweepPlan& plan,
                                const nn::TrainConfig& tcfg, std::size_t max_threads) {
  plan.validate();
  mcfg.validate();
  const std::size_t n_spc = plan.spc_values.size();
  const std::size_t n_tasks = n_spc * plan.trials;
  std::vector<TrialResult> results(n_tasks);

  std::size_t workers = max_threads ? max_threads : std::thread::hardware_concurrency();
  workers = std::max<std::size_t>(1, std::min(workers, n_tasks));

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto work = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      const std::size_t spc_index = task / plan.trials;
      const std::size_t trial = task % plan.trials;
      const std::size_t spc = plan.spc_values[spc_index];
      try {
        results[task] = run_trial(mcfg, backbone, train_full, test_id, test_ood, spc,
                                  trial_seed(plan.base_seed, spc, trial), tcfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<SweepRow> rows;
  rows.reserve(n_spc);
  for (std::size_t s = 0; s < n_spc; ++s) {
    std::vector<TrialResult> cell(results.begin() + s * plan.trials,
                                  results.begin() + (s + 1) * plan.trials);
    rows.push_back(aggregate_trials(plan.spc_values[s], cell));
  }
  return rows;
}

// ------------------------------------------------------------- CSV / files

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("cannot parse number '" + s + "'");
  }
  return v;
}

std::string sweep_csv_header() {
  std::string header = "spc";
  for (const char* stem : kMetricStems) {
    header += ";mean_";
    header += stem;
    header += ";std_";
    header += stem;
  }
  return header;
}

namespace {

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
    os << content;
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot move " + tmp + " into place");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  if (rows.empty()) throw std::invalid_argument("write_sweep_csv: no rows");
  std::ostringstream os;
  os << sweep_csv_header() << "\n";
  for (const SweepRow& row : rows) {
    os << row.spc;
    for (std::size_t f = 0; f < kMetricCount; ++f) {
      os << ';' << format_double(row.mean[f]) << ';' << format_double(row.stddev[f]);
    }
    os << "\n";
  }
  atomic_write(path, os.str());
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty CSV: " + path);
  if (line != sweep_csv_header()) throw std::runtime_error("unexpected CSV header in " + path);
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line, ';');
    if (cells.size() != 1 + 2 * kMetricCount) {
      throw std::runtime_error("bad CSV row in " + path + ": '" + line + "'");
    }
    SweepRow row;
    row.spc = static_cast<std::size_t>(std::stoull(cells[0]));
    for (std::size_t f = 0; f < kMetricCount; ++f) {
      row.mean[f] = parse_double(cells[1 + 2 * f]);
      row.stddev[f] = parse_double(cells[2 + 2 * f]);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ostringstream os;
  for (const auto& [key, value] : entries) os << key << "=" << value << "\n";
  atomic_write(path, os.str());
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad manifest line: '" + line + "'");
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

// ------------------------------------------------------------- regression

const char* regression_method_name(RegressionMethod m) {
  switch (m) {
    case RegressionMethod::kBaselineMse: return "baseline";
    case RegressionMethod::kEnsembleNll: return "ensemble_nll";
    case RegressionMethod::kFlipoutMse: return "flipout";
    case RegressionMethod::kFlipoutNll: return "flipout_nll";
    case RegressionMethod::kDropout: return "dropout";
    case RegressionMethod::kDropConnect: return "dropconnect";
  }
  return "?";
}

RegressionMethod parse_regression_method(const std::string& name) {
  if (name == "baseline" || name == "baseline_mse") return RegressionMethod::kBaselineMse;
  if (name == "ensemble_nll" || name == "ensemble" || name == "deepensemble") {
    return RegressionMethod::kEnsembleNll;
  }
  if (name == "flipout" || name == "flipout_mse") return RegressionMethod::kFlipoutMse;
  if (name == "flipout_nll") return RegressionMethod::kFlipoutNll;
  if (name == "dropout") return RegressionMethod::kDropout;
  if (name == "dropconnect") return RegressionMethod::kDropConnect;
  throw std::invalid_argument("unknown regression method '" + name + "'");
}

nn::ModelSpec make_regression_spec(RegressionMethod m, double drop_prob) {
  using nn::LayerKind;
  nn::ModelSpec spec;
  spec.input_shape = {1};
  spec.trunk = {{.kind = LayerKind::kDense, .units = 32},
                {.kind = LayerKind::kRelu},
                {.kind = LayerKind::kDense, .units = 32},
                {.kind = LayerKind::kRelu}};
  spec.output = nn::OutputKind::kRegressionMean;
  switch (m) {
    case RegressionMethod::kBaselineMse:
      spec.mean_head = {{.kind = LayerKind::kDense, .units = 1}};
      break;
    case RegressionMethod::kEnsembleNll:
      spec.mean_head = {{.kind = LayerKind::kDense, .units = 1}};
      spec.var_head = {{.kind = LayerKind::kDense, .units = 1}, {.kind = LayerKind::kSoftplus}};
      spec.output = nn::OutputKind::kRegressionMeanVar;
      break;
    case RegressionMethod::kFlipoutMse:
      spec.mean_head = {{.kind = LayerKind::kFlipoutDense, .units = 1}};
      break;
    case RegressionMethod::kFlipoutNll:
      spec.mean_head = {{.kind = LayerKind::kFlipoutDense, .units = 1}};
      spec.var_head = {{.kind = LayerKind::kFlipoutDense, .units = 1}, {.kind = LayerKind::kSoftplus}};
      spec.output = nn::OutputKind::kRegressionMeanVar;
      break;
    case RegressionMethod::kDropout:
      spec.trunk.push_back({.kind = LayerKind::kDropout, .drop_prob = drop_prob});
      spec.mean_head = {{.kind = LayerKind::kDense, .units = 1}};
      break;
    case RegressionMethod::kDropConnect:
      spec.mean_head = {{.kind = LayerKind::kDropConnect, .units = 1, .drop_prob = drop_prob}};
      break;
  }
  return spec;
}

RegressionCurves run_regression_toy(RegressionMethod method, std::size_t n_samples,
                                    const nn::TrainConfig& cfg, std::size_t grid_points,
                                    std::size_t mc_samples, std::size_t ensemble_size) {
  if (grid_points < 2) throw std::invalid_argument("run_regression_toy: need at least 2 grid points");
  const data::LabeledDataset data = data::make_toy_regression(n_samples, derive_seed(cfg.seed, 11));
  const nn::ModelSpec spec = make_regression_spec(method);
  const bool two_headed = spec.output == nn::OutputKind::kRegressionMeanVar;

  RegressionCurves curves;
  curves.x.resize(grid_points);
  const double step = (data::kToyRegressionEvalHi - data::kToyRegressionEvalLo) /
                      static_cast<double>(grid_points - 1);
  Tensor grid({grid_points, 1});
  for (std::size_t i = 0; i < grid_points; ++i) {
    curves.x[i] = data::kToyRegressionEvalLo + step * static_cast<double>(i);
    grid[i] = curves.x[i];
  }

  // One row of mean-head outputs per sampled prediction (member or MC pass).
  std::vector<std::vector<double>> mean_draws;
  std::vector<std::vector<double>> var_draws;

  if (method == RegressionMethod::kEnsembleNll) {
    auto models =
        methods::train_ensemble(spec, data, cfg, ensemble_size, derive_seed(cfg.seed, 12));
    for (auto& model : models) {
      const Tensor out = model.forward(grid, nn::Mode::kEval, nullptr);
      std::vector<double> mu(grid_points), var(grid_points);
      for (std::size_t i = 0; i < grid_points; ++i) {
        mu[i] = out.at(i, 0);
        var[i] = out.at(i, 1);
      }
      mean_draws.push_back(std::move(mu));
      var_draws.push_back(std::move(var));
    }
  } else {
    nn::Model model(spec, derive_seed(cfg.seed, 2));
    nn::TrainConfig train_cfg = cfg;
    train_cfg.seed = derive_seed(cfg.seed, 3);
    nn::train(model, data, train_cfg);
    if (method == RegressionMethod::kBaselineMse) {
      const Tensor out = model.forward(grid, nn::Mode::kEval, nullptr);
      std::vector<double> mu(grid_points);
      for (std::size_t i = 0; i < grid_points; ++i) mu[i] = out[i];
      mean_draws.push_back(std::move(mu));
    } else {
      RngStream mc(derive_seed(cfg.seed, 4));
      model.set_stochastic_eval(true);
      for (std::size_t m = 0; m < mc_samples; ++m) {
        RngStream pass = mc.split();
        const Tensor out = model.forward(grid, nn::Mode::kEval, &pass);
        std::vector<double> mu(grid_points);
        for (std::size_t i = 0; i < grid_points; ++i) mu[i] = two_headed ? out.at(i, 0) : out[i];
        mean_draws.push_back(std::move(mu));
        if (two_headed) {
          std::vector<double> var(grid_points);
          for (std::size_t i = 0; i < grid_points; ++i) var[i] = out.at(i, 1);
          var_draws.push_back(std::move(var));
        }
      }
      model.set_stochastic_eval(false);
    }
  }

  const double draws = static_cast<double>(mean_draws.size());
  curves.mean.assign(grid_points, 0.0);
  curves.epistemic_std.assign(grid_points, 0.0);
  for (std::size_t i = 0; i < grid_points; ++i) {
    double mu = 0.0;
    for (const auto& draw : mean_draws) mu += draw[i];
    mu /= draws;
    double var = 0.0;
    for (const auto& draw : mean_draws) var += (draw[i] - mu) * (draw[i] - mu);
    curves.mean[i] = mu;
    curves.epistemic_std[i] = std::sqrt(var / draws);
  }
  if (!var_draws.empty()) {
    std::vector<double> aleatoric(grid_points, 0.0);
    for (std::size_t i = 0; i < grid_points; ++i) {
      for (const auto& draw : var_draws) aleatoric[i] += draw[i];
      aleatoric[i] /= static_cast<double>(var_draws.size());
    }
    curves.aleatoric_variance = std::move(aleatoric);
  }
  return curves;
}

}  // namespace uq::harness
