#include "uqbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace uq::metrics {

double entropy(const double* probs, std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs[i];
    if (p < -1e-12) throw std::invalid_argument("entropy: negative probability " + std::to_string(p));
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double entropy(const std::vector<double>& probs) { return entropy(probs.data(), probs.size()); }

double entropy_row(const Tensor& probs, std::size_t row) {
  return entropy(probs.data() + row * probs.dim(1), probs.dim(1));
}

double max_prob(const double* probs, std::size_t n) {
  if (n == 0) throw std::invalid_argument("max_prob: empty vector");
  return *std::max_element(probs, probs + n);
}

double max_prob(const std::vector<double>& probs) { return max_prob(probs.data(), probs.size()); }

EceReport ece_from_confidence(const std::vector<double>& confidence, const std::vector<bool>& correct,
                              std::size_t n_bins) {
  if (confidence.size() != correct.size()) {
    throw std::invalid_argument("ece: confidence/correctness size mismatch");
  }
  if (n_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  EceReport report;
  report.bins.resize(n_bins);
  const double width = 1.0 / static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    report.bins[b].lo = width * static_cast<double>(b);
    report.bins[b].hi = width * static_cast<double>(b + 1);
  }
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct_sum(n_bins, 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    // bins are right-inclusive: (k/n, (k+1)/n]; c == 0 lands in bin 0
    std::size_t b = 0;
    if (c > 0.0) {
      b = static_cast<std::size_t>(std::ceil(c * static_cast<double>(n_bins))) - 1;
      if (b >= n_bins) b = n_bins - 1;
    }
    ++report.bins[b].count;
    conf_sum[b] += c;
    if (correct[i]) ++correct_sum[b];
  }
  const double total = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t count = report.bins[b].count;
    if (count == 0) continue;
    report.bins[b].mean_confidence = conf_sum[b] / static_cast<double>(count);
    report.bins[b].accuracy = static_cast<double>(correct_sum[b]) / static_cast<double>(count);
    report.ece += static_cast<double>(count) / total *
                  std::abs(report.bins[b].accuracy - report.bins[b].mean_confidence);
  }
  return report;
}

EceReport ece_from_probs(const Tensor& probs, const std::vector<int>& labels, std::size_t n_bins) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw std::invalid_argument("ece: probs " + probs.shape_str() + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = probs.dim(0), classes = probs.dim(1);
  std::vector<double> confidence(n);
  std::vector<bool> correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * classes;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    confidence[i] = row[arg];
    correct[i] = (static_cast<int>(arg) == labels[i]);
  }
  return ece_from_confidence(confidence, correct, n_bins);
}

double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives,
               Orientation orientation) {
  if (positives.empty() || negatives.empty()) {
    throw std::invalid_argument("roc_auc: both score sets must be nonempty");
  }
  const double flip = (orientation == Orientation::kLowerIsPositive) ? -1.0 : 1.0;
  const std::size_t n1 = positives.size(), n0 = negatives.size();
  std::vector<std::pair<double, int>> scores;
  scores.reserve(n1 + n0);
  for (double s : positives) scores.emplace_back(flip * s, 1);
  for (double s : negatives) scores.emplace_back(flip * s, 0);
  std::sort(scores.begin(), scores.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // midranks over tie groups; rank sum of positives gives the U statistic
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < scores.size()) {
    std::size_t j = i;
    while (j < scores.size() && scores[j].first == scores[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (scores[k].second) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

namespace {

std::vector<double> entropies(const methods::PredictionSet& pred) {
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = entropy_row(pred.probs, i);
  return out;
}

// For the gradient method the AUC is computed on the raw scores g directly:
// min-max normalization plus the 1-g reflection is strictly monotone
// decreasing, so "lower confidence is positive" on p equals "higher is
// positive" on g. For everything else the max-probability score is used with
// lower = positive.
double maxprob_auc(const methods::PredictionSet& pos, const methods::PredictionSet& neg) {
  if (pos.raw_score && neg.raw_score) {
    return roc_auc(*pos.raw_score, *neg.raw_score, Orientation::kHigherIsPositive);
  }
  std::vector<double> ps(pos.size()), ns(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) ps[i] = pos.maxprob_score(i);
  for (std::size_t i = 0; i < neg.size(); ++i) ns[i] = neg.maxprob_score(i);
  return roc_auc(ps, ns, Orientation::kLowerIsPositive);
}

}  // namespace

OodSuiteResult ood_suite(const methods::PredictionSet& pred_train,
                         const methods::PredictionSet& pred_test,
                         const methods::PredictionSet& pred_ood) {
  OodSuiteResult result{};
  const bool with_entropy =
      pred_train.has_entropy() && pred_test.has_entropy() && pred_ood.has_entropy();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (with_entropy) {
    const std::vector<double> h_train = entropies(pred_train);
    const std::vector<double> h_test = entropies(pred_test);
    const std::vector<double> h_ood = entropies(pred_ood);
    result.test_vs_ood_entropy = roc_auc(h_ood, h_test, Orientation::kHigherIsPositive);
    result.train_vs_ood_entropy = roc_auc(h_ood, h_train, Orientation::kHigherIsPositive);
    result.train_vs_test_entropy = roc_auc(h_test, h_train, Orientation::kHigherIsPositive);
  } else {
    result.test_vs_ood_entropy = nan;
    result.train_vs_ood_entropy = nan;
    result.train_vs_test_entropy = nan;
  }
  result.test_vs_ood_maxprob = maxprob_auc(pred_ood, pred_test);
  result.train_vs_ood_maxprob = maxprob_auc(pred_ood, pred_train);
  result.train_vs_test_maxprob = maxprob_auc(pred_test, pred_train);
  return result;
}

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw std::invalid_argument("accuracy: probs " + probs.shape_str() + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = probs.dim(0), classes = probs.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * classes;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    if (static_cast<int>(arg) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace uq::metrics
