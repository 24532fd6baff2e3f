#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "qbench/errors.hpp"

namespace qbench {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Ratios with a zero denominator are reported as 0 and flagged.
struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MetricsReport {
  double loss = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool auc_undefined = false;
};

inline void check_lengths(std::size_t labels, std::size_t scores) {
  if (labels != scores)
    throw UsageError("labels (" + std::to_string(labels) + ") and scores (" + std::to_string(scores) +
                     ") differ in length");
}

// A score equal to the threshold counts as a positive prediction.
inline ConfusionCounts confusion(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5) {
  check_lengths(labels.size(), scores.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] != 0;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Accuracy (tp+tn)/total, precision tp/(tp+fp), recall tp/(tp+fn) and their
// harmonic mean.
inline ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw UsageError("classification metrics need at least one sample");
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp == 0) m.precision_undefined = true;
  else m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn == 0) m.recall_undefined = true;
  else m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall == 0.0) m.f1_undefined = true;
  else m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

// Area under the ROC curve by the trapezoidal rule, stepping the threshold
// down through the distinct scores. Tied scores form a single diagonal step.
inline double auc(std::span<const int> labels, std::span<const double> scores) {
  check_lengths(labels.size(), scores.size());
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UsageError("AUC needs both positive and negative labels");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const std::size_t tp0 = tp, fp0 = fp;
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] != 0) ++tp;
      else ++fp;
      ++i;
    }
    // Trapezoid between (fp0, tp0) and (fp, tp) in count units.
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) * 0.5;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
inline double bce_loss(std::span<const int> labels, std::span<const double> scores) {
  check_lengths(labels.size(), scores.size());
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(scores[i], kBceEpsilon, 1.0 - kBceEpsilon);
    s += labels[i] != 0 ? std::log(p) : std::log1p(-p);
  }
  return -s / static_cast<double>(labels.size());
}

inline MetricsReport evaluate_scores(std::span<const int> labels, std::span<const double> scores,
                                     double threshold = 0.5) {
  MetricsReport r;
  r.loss = bce_loss(labels, scores);
  const auto m = classification_metrics(confusion(labels, scores, threshold));
  r.accuracy = m.accuracy;
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  r.precision_undefined = m.precision_undefined;
  r.recall_undefined = m.recall_undefined;
  r.f1_undefined = m.f1_undefined;
  const bool both = std::any_of(labels.begin(), labels.end(), [](int l) { return l != 0; }) &&
                    std::any_of(labels.begin(), labels.end(), [](int l) { return l == 0; });
  if (both) r.auc = auc(labels, scores);
  else r.auc_undefined = true;
  return r;
}

}  // namespace qbench
