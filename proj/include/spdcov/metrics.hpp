#pragma once

// Balanced accuracy, rank-statistic ROC AUC (macro one-vs-rest for more than
// two classes) and the evaluation report.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spdcov/error.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

using Warnings = std::vector<std::string>;

namespace detail {

inline void warn(Warnings* sink, std::string msg) {
  if (sink) sink->push_back(std::move(msg));
}

inline int infer_class_count(std::span<const int> labels, std::span<const int> preds) {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  for (int p : preds) top = std::max(top, p);
  return top + 1;
}

}  // namespace detail

/// Mean of per-class recalls over classes [0, num_classes). Classes without
/// support in `labels` are skipped with a warning. num_classes < 0 infers it
/// from the data.
inline double balanced_accuracy(std::span<const int> labels, std::span<const int> predictions,
                                Warnings* warnings = nullptr, int num_classes = -1) {
  if (labels.size() != predictions.size())
    throw DataError("balanced_accuracy: labels and predictions differ in length");
  if (labels.empty()) throw DataError("balanced_accuracy: no samples");
  for (int l : labels)
    if (l < 0) throw DataError("balanced_accuracy: negative label");
  if (num_classes < 0) num_classes = detail::infer_class_count(labels, predictions);
  std::vector<std::size_t> support(num_classes, 0), hit(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw DataError("balanced_accuracy: label out of range");
    ++support[labels[i]];
    if (predictions[i] == labels[i]) ++hit[labels[i]];
  }
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (support[c] == 0) {
      detail::warn(warnings, "balanced_accuracy: class " + std::to_string(c) +
                                 " has no support and is excluded");
      continue;
    }
    sum += static_cast<double>(hit[c]) / support[c];
    ++used;
  }
  return sum / used;
}

/// Binary ROC AUC as the Mann-Whitney statistic with midranks (ties count
/// 1/2). Nonzero entries of `positive` mark the positive class.
inline double binary_auc(std::span<const int> positive, std::span<const double> scores) {
  if (positive.size() != scores.size()) throw DataError("auc: labels and scores differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]] != 0) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: need both positive and negative samples");
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * n_neg);
}

/// `probabilities` is N x K with rows summing to 1. Two classes use the
/// class-1 column; more classes average the one-vs-rest AUCs of every class
/// that has both positives and negatives.
inline double auc(std::span<const int> labels, const Matrix& probabilities,
                  Warnings* warnings = nullptr) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (probabilities.rows() != n) throw DimensionMismatch("auc", n, probabilities.rows());
  const Eigen::Index k = probabilities.cols();
  if (k < 2) throw DataError("auc: need at least 2 score columns");
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(probabilities.row(i).sum() - 1.0) > 1e-6)
      throw DataError("auc: score row " + std::to_string(i) + " does not sum to 1");
  for (int l : labels)
    if (l < 0 || l >= k) throw DataError("auc: label out of range");

  auto one_vs_rest = [&](Eigen::Index c) {
    std::vector<int> pos(labels.size());
    std::vector<double> s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      pos[i] = labels[i] == c ? 1 : 0;
      s[i] = probabilities(static_cast<Eigen::Index>(i), c);
    }
    return binary_auc(pos, s);
  };

  std::vector<std::size_t> support(k, 0);
  for (int l : labels) ++support[l];
  if (k == 2) {
    if (support[0] == 0 || support[1] == 0)
      throw DataError("auc: binary evaluation needs both classes present");
    return one_vs_rest(1);
  }
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (support[c] == 0 || support[c] == labels.size()) {
      detail::warn(warnings, "auc: class " + std::to_string(c) +
                                 " absent from labels (or the only class) and excluded");
      continue;
    }
    sum += one_vs_rest(c);
    ++used;
  }
  if (used == 0) throw DataError("auc: no class has both positives and negatives");
  return sum / used;
}

struct EvalReport {
  double balanced_accuracy = 0.0;
  double auc = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_recall;                 // NaN for classes without support
  std::vector<std::vector<std::size_t>> confusion;      // rows: true class, cols: predicted
  std::size_t sample_count = 0;
  Warnings warnings;
};

inline constexpr int kReportSchemaVersion = 1;

/// Assembles the report from true labels, predicted labels and per-class
/// probabilities (N x K).
inline EvalReport make_report(std::span<const int> labels, std::span<const int> predictions,
                              const Matrix& probabilities) {
  if (labels.empty()) throw DataError("evaluate: empty split");
  const int k = static_cast<int>(probabilities.cols());
  EvalReport r;
  r.sample_count = labels.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k || predictions[i] < 0 || predictions[i] >= k)
      throw DataError("evaluate: label or prediction outside [0, " + std::to_string(k) + ")");
    ++r.confusion[labels[i]][predictions[i]];
    if (labels[i] == predictions[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / labels.size();
  r.per_class_recall.resize(k);
  for (int c = 0; c < k; ++c) {
    const auto support = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class_recall[c] = support ? static_cast<double>(r.confusion[c][c]) / support : std::nan("");
  }
  r.balanced_accuracy = balanced_accuracy(labels, predictions, &r.warnings, k);
  try {
    r.auc = auc(labels, probabilities, &r.warnings);
  } catch (const DataError& e) {
    r.auc = std::nan("");
    r.warnings.push_back(std::string("AUC undefined: ") + e.what());
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json recall = nlohmann::json::array();
  for (double v : r.per_class_recall) recall.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"schema_version", kReportSchemaVersion},
          {"balanced_accuracy", r.balanced_accuracy},
          {"auc", std::isnan(r.auc) ? nlohmann::json(nullptr) : nlohmann::json(r.auc)},
          {"accuracy", r.accuracy},
          {"per_class_recall", recall},
          {"confusion_matrix", r.confusion},
          {"sample_count", r.sample_count},
          {"warnings", r.warnings}};
}

inline void print_report(std::ostream& os, const EvalReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "samples:           " << r.sample_count << "\n";
  os << "balanced accuracy: " << r.balanced_accuracy << "\n";
  os << "AUC:               " << r.auc << "\n";
  os << "accuracy:          " << r.accuracy << "\n";
  os << "per-class recall:\n";
  for (std::size_t c = 0; c < r.per_class_recall.size(); ++c)
    os << "  class " << c << ": " << r.per_class_recall[c] << "\n";
  os << "confusion (rows = true):\n";
  for (const auto& row : r.confusion) {
    os << " ";
    for (auto v : row) os << " " << std::setw(6) << v;
    os << "\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  os.unsetf(std::ios::floatfield);
}

}  // namespace spdcov
