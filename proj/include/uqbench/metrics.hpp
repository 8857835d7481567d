#pragma once

#include <cstddef>
#include <vector>

#include "uqbench/prediction.hpp"
#include "uqbench/tensor.hpp"

namespace uq::metrics {

// Predictive entropy -sum p log p (natural log, 0 log 0 = 0).
double entropy(const double* probs, std::size_t n);
double entropy(const std::vector<double>& probs);
double entropy_row(const Tensor& probs, std::size_t row);

double max_prob(const double* probs, std::size_t n);
double max_prob(const std::vector<double>& probs);

struct EceBin {
  double lo = 0.0, hi = 0.0;  // confidence range (lo, hi]
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct EceReport {
  double ece = 0.0;
  std::vector<EceBin> bins;
};

// Expected calibration error over equal-width right-inclusive bins on (0,1].
EceReport ece_from_confidence(const std::vector<double>& confidence,
                              const std::vector<bool>& correct, std::size_t n_bins = 15);
EceReport ece_from_probs(const Tensor& probs, const std::vector<int>& labels, std::size_t n_bins = 15);

enum class Orientation { kHigherIsPositive, kLowerIsPositive };

// Rank-based (Mann-Whitney) AUC with ties counted 0.5.
double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives,
               Orientation orientation);

// AUCs for the three dataset pairings x {entropy, maxprob}, with the
// unseen/OOD side as the positive class throughout. Entropy AUCs are NaN for
// prediction sets that carry no entropy (gradient method).
struct OodSuiteResult {
  double test_vs_ood_entropy, test_vs_ood_maxprob;
  double train_vs_ood_entropy, train_vs_ood_maxprob;
  double train_vs_test_entropy, train_vs_test_maxprob;
};

OodSuiteResult ood_suite(const methods::PredictionSet& pred_train,
                         const methods::PredictionSet& pred_test,
                         const methods::PredictionSet& pred_ood);

double accuracy(const Tensor& probs, const std::vector<int>& labels);

}  // namespace uq::metrics
