#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "metanet/eval.hpp"
#include "metanet/features.hpp"
#include "metanet/net.hpp"

namespace metanet {

struct SweepGrid {
  std::vector<std::size_t> layer_options{1, 2, 4};
  std::vector<double> learning_rates{0.01, 0.1};
  std::size_t trials = 5;
  std::uint64_t base_seed = 0;

  void validate() const {
    if (layer_options.empty() || learning_rates.empty()) throw ValidationError("sweep grid lists must be non-empty");
    if (trials < 1) throw ValidationError("sweep needs at least one trial");
  }
};

struct TrialRecord {
  std::size_t layers = 0;
  double learning_rate = 0.0;
  std::size_t trial = 0;
  MetricsRecord metrics;
  StopReason stop_reason = StopReason::kMaxEpochs;
  std::size_t epochs = 0;
  std::optional<std::string> error;  // training threw; the trial counts as failed

  bool converged() const { return !error && stop_reason != StopReason::kDiverged; }
};

struct CellSummary {
  std::size_t layers = 0;
  double learning_rate = 0.0;
  MetricsRecord mean;  // over converged trials only
  std::size_t converged = 0;
  std::size_t diverged = 0;
  std::size_t failed = 0;

  bool flagged() const { return converged == 0; }
};

struct SweepResult {
  std::vector<TrialRecord> trials;  // cell-major, then trial index
  std::vector<CellSummary> cells;   // ordered by (layers, learning rate)
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<TrialRecord>& trials,
                                     std::optional<double> MetricsRecord::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : trials) {
    if (t.converged() && t.metrics.*field) {
      sum += *(t.metrics.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

inline CellSummary summarize_cell(std::size_t layers, double lr, const std::vector<TrialRecord>& trials) {
  CellSummary c{layers, lr, {}, 0, 0, 0};
  for (const auto& t : trials) {
    if (t.error) ++c.failed;
    else if (t.stop_reason == StopReason::kDiverged) ++c.diverged;
    else ++c.converged;
  }
  c.mean.sensitivity = detail::mean_of(trials, &MetricsRecord::sensitivity);
  c.mean.specificity = detail::mean_of(trials, &MetricsRecord::specificity);
  c.mean.precision = detail::mean_of(trials, &MetricsRecord::precision);
  c.mean.accuracy = detail::mean_of(trials, &MetricsRecord::accuracy);
  c.mean.auc = detail::mean_of(trials, &MetricsRecord::auc);
  return c;
}

/// Trains and evaluates one (layers, learning rate, trial) cell entry.
inline TrialRecord run_trial(const DatasetSplits& splits, std::size_t layers, double lr, std::size_t trial,
                             std::uint64_t base_seed, ModelConfig mc, TrainConfig tc) {
  TrialRecord rec{layers, lr, trial, {}, StopReason::kMaxEpochs, 0, std::nullopt};
  try {
    const std::uint64_t seed = base_seed + trial;
    mc.hidden_layers = layers;
    mc.init_seed = seed;
    tc.learning_rate = lr;
    tc.train_seed = seed;
    const auto balanced = balance_by_resampling(splits.train, seed);
    auto result = train(init_network<float>(mc), std::span(balanced), std::span(splits.validation), tc);
    rec.stop_reason = result.history.stop_reason;
    rec.epochs = result.history.epochs.size();
    if (rec.stop_reason != StopReason::kDiverged) {
      const auto scores = predict_batch(result.network, std::span(splits.test));
      const auto labels = labels_of(splits.test);
      rec.metrics = evaluate(scores, labels);
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

using TrialCallback = std::function<void(const TrialRecord&)>;

/// Runs every (cell, trial) pair on `workers` threads. Each trial is seeded
/// from base_seed + trial index, so results do not depend on scheduling.
inline SweepResult run_sweep(const DatasetSplits& splits, const SweepGrid& grid, const ModelConfig& mc,
                             const TrainConfig& tc, std::size_t workers = 1, const TrialCallback& on_trial = {}) {
  grid.validate();
  mc.validate();
  tc.validate();
  if (splits.train.empty() || splits.validation.empty() || splits.test.empty()) {
    throw ValidationError("sweep requires non-empty train, validation and test splits");
  }

  std::vector<std::size_t> layers = grid.layer_options;
  std::vector<double> rates = grid.learning_rates;
  std::sort(layers.begin(), layers.end());
  std::sort(rates.begin(), rates.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  rates.erase(std::unique(rates.begin(), rates.end()), rates.end());

  struct Task {
    std::size_t layers;
    double lr;
    std::size_t trial;
  };
  std::vector<Task> tasks;
  for (auto l : layers) {
    for (auto r : rates) {
      for (std::size_t t = 0; t < grid.trials; ++t) tasks.push_back({l, r, t});
    }
  }

  SweepResult result;
  result.trials.resize(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      const auto& task = tasks[i];
      result.trials[i] = run_trial(splits, task.layers, task.lr, task.trial, grid.base_seed, mc, tc);
      if (on_trial) {
        std::lock_guard lock(callback_mutex);
        on_trial(result.trials[i]);
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, tasks.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }

  for (std::size_t c = 0; c < layers.size() * rates.size(); ++c) {
    const auto first = result.trials.begin() + static_cast<std::ptrdiff_t>(c * grid.trials);
    std::vector<TrialRecord> cell(first, first + static_cast<std::ptrdiff_t>(grid.trials));
    result.cells.push_back(summarize_cell(layers[c / rates.size()], rates[c % rates.size()], cell));
  }
  return result;
}

struct ReportRow {
  std::size_t layers = 0;
  double learning_rate = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  std::optional<double> auc;
  std::size_t converged = 0;
  std::size_t diverged = 0;
};

/// One row per cell, ordered by (layers, learning rate).
inline std::vector<ReportRow> aggregate(const SweepResult& result) {
  std::vector<ReportRow> rows;
  for (const auto& c : result.cells) {
    rows.push_back({c.layers, c.learning_rate, c.mean.sensitivity, c.mean.specificity, c.mean.precision, c.mean.auc,
                    c.converged, c.diverged + c.failed});
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.layers != b.layers ? a.layers < b.layers : a.learning_rate < b.learning_rate;
  });
  return rows;
}

enum class ReportFormat { kCsv, kMarkdown };

namespace detail {

inline std::string fixed3(const std::optional<double>& v, const char* missing) {
  if (!v) return missing;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

inline std::string shortest(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

/// Writes the Table-1 column layout plus a count of excluded (diverged or
/// failed) trials. Returns bytes written.
inline std::uint64_t emit_report(const std::vector<ReportRow>& rows, ReportFormat format, std::ostream& out) {
  std::string text;
  if (format == ReportFormat::kMarkdown) {
    text += "| N layers | learning rate | sensitivity | specificity | precision | auc | excluded |\n";
    text += "|---:|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
      text += "| " + std::to_string(r.layers) + " | " + detail::shortest(r.learning_rate) + " | " +
              detail::fixed3(r.sensitivity, "n/a") + " | " + detail::fixed3(r.specificity, "n/a") + " | " +
              detail::fixed3(r.precision, "n/a") + " | " + detail::fixed3(r.auc, "n/a") + " | " +
              std::to_string(r.diverged) + " |\n";
    }
  } else {
    text += "layers,learning_rate,sensitivity,specificity,precision,auc,excluded\n";
    for (const auto& r : rows) {
      text += std::to_string(r.layers) + "," + detail::shortest(r.learning_rate) + "," + detail::fixed3(r.sensitivity, "") +
              "," + detail::fixed3(r.specificity, "") + "," + detail::fixed3(r.precision, "") + "," +
              detail::fixed3(r.auc, "") + "," + std::to_string(r.diverged) + "\n";
    }
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("report write failed");
  return text.size();
}

}  // namespace metanet
