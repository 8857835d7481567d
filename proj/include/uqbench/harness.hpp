#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uqbench/datasets.hpp"
#include "uqbench/methods.hpp"
#include "uqbench/metrics.hpp"
#include "uqbench/train.hpp"

namespace uq::harness {

inline constexpr std::size_t kMetricCount = 11;

// Column stems, in CSV order.
inline constexpr std::array<const char*, kMetricCount> kMetricStems = {
    "acc",
    "mean_entropy",
    "mean_maxprob",
    "train_ece",
    "ece",
    "ood_auc_entropy",
    "ood_auc_maxprob",
    "tr_test_auc_entropy",
    "tr_test_auc_maxprob",
    "tr_ood_auc_entropy",
    "tr_ood_auc_maxprob",
};

// All metrics for one (method, spc, trial) cell. Entropy-based fields are
// NaN for the gradient method, which produces no entropy.
struct TrialResult {
  double acc = 0.0;
  double mean_entropy = 0.0;
  double mean_maxprob = 0.0;
  double train_ece = 0.0;
  double ece = 0.0;
  double ood_auc_entropy = 0.0;
  double ood_auc_maxprob = 0.0;
  double tr_test_auc_entropy = 0.0;
  double tr_test_auc_maxprob = 0.0;
  double tr_ood_auc_entropy = 0.0;
  double tr_ood_auc_maxprob = 0.0;

  std::array<double, kMetricCount> as_array() const;
};

struct SweepPlan {
  std::vector<std::size_t> spc_values = {1, 5, 10, 50, 100, 250, 500, 1000, 5000};
  std::size_t trials = 5;
  std::uint64_t base_seed = 0;

  void validate() const;  // spc strictly increasing and positive, trials >= 1
};

// Mean and population standard deviation of each metric over the trials.
struct SweepRow {
  std::size_t spc = 0;
  std::array<double, kMetricCount> mean{};
  std::array<double, kMetricCount> stddev{};
};

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t spc, std::size_t trial_index);

// Sub-samples the training pool, trains the method, and evaluates the full
// metric block. The train side of every metric is the sub-sampled set.
TrialResult run_trial(const methods::MethodConfig& mcfg, methods::Backbone backbone,
                      const data::LabeledDataset& train_full, const data::LabeledDataset& test_id,
                      const data::LabeledDataset& test_ood, std::size_t spc, std::uint64_t seed,
                      const nn::TrainConfig& tcfg);

// One row per SPC value, trials aggregated by mean/population-std. Trials
// run concurrently (max_threads = 0 uses the hardware count); results do not
// depend on scheduling.
std::vector<SweepRow> run_sweep(const methods::MethodConfig& mcfg, methods::Backbone backbone,
                                const data::LabeledDataset& train_full,
                                const data::LabeledDataset& test_id,
                                const data::LabeledDataset& test_ood, const SweepPlan& plan,
                                const nn::TrainConfig& tcfg, std::size_t max_threads = 0);

SweepRow aggregate_trials(std::size_t spc, const std::vector<TrialResult>& trials);

// Shortest-exact decimal representation (17 significant digits); NaN prints
// as "nan".
std::string format_double(double v);
double parse_double(const std::string& s);

// Semicolon-separated, header first, written atomically (temp + rename).
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
std::vector<SweepRow> read_sweep_csv(const std::string& path);
std::string sweep_csv_header();

// Plain-text key=value run manifest, written atomically.
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries);
std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path);

// ------------------------------------------------------------- regression

enum class RegressionMethod { kBaselineMse, kEnsembleNll, kFlipoutMse, kFlipoutNll, kDropout, kDropConnect };

const char* regression_method_name(RegressionMethod m);
RegressionMethod parse_regression_method(const std::string& name);

nn::ModelSpec make_regression_spec(RegressionMethod m, double drop_prob = 0.25);

struct RegressionCurves {
  std::vector<double> x;                                  // evaluation grid
  std::vector<double> mean;                               // predicted mu(x)
  std::optional<std::vector<double>> aleatoric_variance;  // variance-head output, NLL methods only
  std::vector<double> epistemic_std;                      // spread over samples/members
};

RegressionCurves run_regression_toy(RegressionMethod method, std::size_t n_samples,
                                    const nn::TrainConfig& cfg, std::size_t grid_points = 281,
                                    std::size_t mc_samples = 50, std::size_t ensemble_size = 5);

}  // namespace uq::harness
