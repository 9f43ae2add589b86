#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "metanet/error.hpp"

namespace metanet {

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Point metrics; nullopt marks a zero-denominator (undefined) entry.
struct MetricsRecord {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  std::optional<double> accuracy;
  std::optional<double> auc;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr double kDefaultThreshold = 0.5;

/// Predicted positive iff score >= threshold.
inline ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                                 double threshold = kDefaultThreshold) {
  if (scores.size() != labels.size()) {
    throw ValidationError("scores (" + std::to_string(scores.size()) + ") and labels (" +
                          std::to_string(labels.size()) + ") differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++cm.tp;
    else if (predicted) ++cm.fp;
    else if (actual) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

inline MetricsRecord metrics(const ConfusionMatrix& cm) {
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  MetricsRecord m;
  m.sensitivity = ratio(cm.tp, cm.tp + cm.fn);
  m.specificity = ratio(cm.tn, cm.tn + cm.fp);
  m.precision = ratio(cm.tp, cm.tp + cm.fp);
  m.accuracy = ratio(cm.tp + cm.tn, cm.total());
  return m;
}

/// Trapezoidal area under the ROC curve, sweeping the threshold down through
/// the distinct scores. Tied scores move the curve diagonally, which is what
/// makes the area equal the pair statistic with ties counted as one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::uint64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg)++;
  if (pos == 0 || neg == 0) throw ValidationError("AUC needs both classes present");

  // Integrate in counts (tp, fp) and normalize once; the doubled trapezoid
  // sum stays an exact integer for any realistic N.
  std::uint64_t tp = 0, fp = 0, doubled_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::uint64_t dtp = 0, dfp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? dtp : dfp)++;
    doubled_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
  }
  return static_cast<double>(doubled_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Confusion-based metrics plus AUC; AUC is undefined for single-class input.
inline MetricsRecord evaluate(std::span<const double> scores, std::span<const int> labels,
                              double threshold = kDefaultThreshold) {
  MetricsRecord m = metrics(confusion(scores, labels, threshold));
  const bool has_pos = std::any_of(labels.begin(), labels.end(), [](int y) { return y != 0; });
  const bool has_neg = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
  if (has_pos && has_neg) m.auc = roc_auc(scores, labels);
  return m;
}

inline std::map<std::string, MetricsRecord> evaluate_subsets(std::span<const double> scores, std::span<const int> labels,
                                                             std::span<const std::string> group_keys,
                                                             double threshold = kDefaultThreshold) {
  if (scores.size() != labels.size() || scores.size() != group_keys.size()) {
    throw ValidationError("scores, labels and group keys differ in length");
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> groups;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& g = groups[group_keys[i]];
    g.first.push_back(scores[i]);
    g.second.push_back(labels[i]);
  }
  std::map<std::string, MetricsRecord> out;
  for (const auto& [key, g] : groups) out.emplace(key, evaluate(g.first, g.second, threshold));
  return out;
}

inline nlohmann::json to_json(const MetricsRecord& m) {
  auto v = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
  return {{"sensitivity", v(m.sensitivity)},
          {"specificity", v(m.specificity)},
          {"precision", v(m.precision)},
          {"auc", v(m.auc)},
          {"accuracy", v(m.accuracy)}};
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  auto v = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  return {v("sensitivity"), v("specificity"), v("precision"), v("accuracy"), v("auc")};
}

}  // namespace metanet
