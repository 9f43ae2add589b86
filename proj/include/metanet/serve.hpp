#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metanet/embed.hpp"
#include "metanet/eval.hpp"
#include "metanet/features.hpp"
#include "metanet/net.hpp"
#include "metanet/store.hpp"

namespace metanet {

struct Suggestion {
  std::string candidate_id;
  int label = 0;
  double confidence = 0.5;  // max class probability
  bool offered = false;
  std::uint64_t model_version = 0;
};

struct ModelVersion {
  std::uint64_t version = 0;
  std::size_t training_size = 0;
  MetricsRecord metrics;
  std::string created;
  std::uint64_t seed = 0;
};

/// Held-out scores kept with a model so grouped metrics need no re-prediction.
struct HeldOut {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> violent_words;
  std::vector<std::string> networks;
};

struct ActiveModel {
  Network network;
  ModelVersion info;
  HeldOut held_out;
};

inline nlohmann::json to_json(const Suggestion& s) {
  return {{"candidate_id", s.candidate_id},
          {"label", s.label},
          {"confidence", s.confidence},
          {"offered", s.offered},
          {"model_version", s.model_version}};
}

inline nlohmann::json to_json(const ModelVersion& v) {
  return {{"version", v.version},
          {"training_size", v.training_size},
          {"metrics", to_json(v.metrics)},
          {"created", v.created},
          {"seed", v.seed}};
}

inline ModelVersion model_version_from_json(const nlohmann::json& j) {
  return {j.at("version").get<std::uint64_t>(), j.at("training_size").get<std::size_t>(),
          metrics_from_json(j.at("metrics")), j.value("created", ""), j.value("seed", std::uint64_t{0})};
}

/// Label = argmax class, confidence = max probability, offered iff confidence >= threshold.
inline Suggestion make_suggestion(double p_metaphor, double threshold, std::uint64_t version, std::string candidate_id = {}) {
  Suggestion s;
  s.candidate_id = std::move(candidate_id);
  s.label = p_metaphor > 0.5 ? 1 : 0;
  s.confidence = std::max(p_metaphor, 1.0 - p_metaphor);
  s.offered = s.confidence >= threshold;
  s.model_version = version;
  return s;
}

/// Versioned model files plus an append-only versions log. The active model
/// sits behind a shared_ptr that is swapped under a mutex, so a reader keeps
/// whichever version it grabbed until it is done with it.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    std::optional<nlohmann::json> last;
    detail::for_each_json_line(log_path(), [&](const nlohmann::json& j) { last = j; });
    if (last) {
      auto model = std::make_shared<ActiveModel>();
      model->info = model_version_from_json(last->at("model"));
      const auto& h = last->at("held_out");
      model->held_out = {h.at("scores").get<std::vector<double>>(), h.at("labels").get<std::vector<int>>(),
                         h.at("violent_words").get<std::vector<std::string>>(),
                         h.at("networks").get<std::vector<std::string>>()};
      std::ifstream in(model_path(model->info.version), std::ios::binary);
      if (!in) throw IoError("missing model file for version " + std::to_string(model->info.version));
      model->network = load_model(in);
      active_ = std::move(model);
    }
  }

  std::filesystem::path log_path() const { return dir_ / "versions.jsonl"; }
  std::filesystem::path model_path(std::uint64_t version) const {
    return dir_ / ("v" + std::to_string(version) + ".mvnn");
  }

  std::shared_ptr<const ActiveModel> active() const {
    std::lock_guard lock(mutex_);
    return active_;
  }

  std::uint64_t next_version() const {
    std::lock_guard lock(mutex_);
    return active_ ? active_->info.version + 1 : 1;
  }

  /// Persists the model, appends it to the versions log and makes it active.
  void publish(std::shared_ptr<ActiveModel> model) {
    {
      std::lock_guard lock(mutex_);
      const std::uint64_t expected = active_ ? active_->info.version + 1 : 1;
      if (model->info.version != expected) throw ConflictError("model version must be " + std::to_string(expected));
    }
    std::ostringstream bytes;
    save_model(model->network, bytes);
    detail::write_atomically(model_path(model->info.version), bytes.str());
    const nlohmann::json entry = {{"model", to_json(model->info)},
                                  {"held_out",
                                   {{"scores", model->held_out.scores},
                                    {"labels", model->held_out.labels},
                                    {"violent_words", model->held_out.violent_words},
                                    {"networks", model->held_out.networks}}}};
    detail::append_durable(log_path(), entry.dump());
    std::lock_guard lock(mutex_);
    active_ = std::move(model);
  }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::shared_ptr<const ActiveModel> active_;
};

/// Restricts the training and validation splits to one violent word or
/// network. The held-out split is left whole, so grouped metrics show how the
/// model does on the groups it never saw.
struct TrainingFilter {
  std::string group_by;  // "violent_word" or "network"
  std::string value;

  void validate() const {
    if (group_by != "violent_word" && group_by != "network") throw ValidationError("group_by must be violent_word or network");
    if (value.empty()) throw ValidationError("filter value must be non-empty");
  }
  bool matches(const LabeledExample& e) const { return (group_by == "network" ? e.network : e.violent_word) == value; }
};

struct ServiceConfig {
  double offer_threshold = 0.9;
  ModelConfig model;
  TrainConfig training;
  std::uint64_t base_seed = 0;
  LookupPolicy lookup;
};

/// The suggest / annotate / retrain loop over a store and a model registry.
class SuggestionService {
 public:
  SuggestionService(AnnotationStore& store, ModelRegistry& registry, const EmbeddingTable& embeddings,
                    ServiceConfig config)
      : store_(store), registry_(registry), embeddings_(embeddings), config_(std::move(config)) {
    config_.model.input_dim = kWindowSize * embeddings_.dim();
    if (!(config_.offer_threshold >= 0.5 && config_.offer_threshold <= 1.0)) {
      throw ValidationError("offer threshold must lie in [0.5, 1]");
    }
  }

  AnnotationStore& store() { return store_; }
  ModelRegistry& registry() { return registry_; }
  const ServiceConfig& config() const { return config_; }
  bool retraining() const { return retraining_.load(); }

  std::optional<Suggestion> try_suggest(const TokenWindow& window, std::string candidate_id = {}) const {
    const auto model = registry_.active();
    if (!model) return std::nullopt;
    const auto features = featurize(window, embeddings_, config_.lookup);
    return make_suggestion(predict(model->network, features), config_.offer_threshold, model->info.version,
                           std::move(candidate_id));
  }

  /// Throws ConflictError when no model has been trained yet.
  Suggestion suggest(const TokenWindow& window, std::string candidate_id = {}) const {
    if (window.center().empty()) throw ValidationError("center token must be non-empty");
    auto s = try_suggest(window, std::move(candidate_id));
    if (!s) throw ConflictError("cold start: no active model");
    return *s;
  }

  Suggestion suggest_for(const std::string& candidate_id) const {
    auto c = store_.candidate(candidate_id);
    if (!c) throw NotFoundError("unknown candidate '" + candidate_id + "'");
    return suggest(c->window, candidate_id);
  }

  std::uint64_t annotate(Annotation a) { return store_.record(std::move(a)); }

  /// Approves the current suggestion for a candidate as its label.
  std::uint64_t approve(const std::string& candidate_id, const std::string& annotator) {
    const auto s = suggest_for(candidate_id);
    Annotation a;
    a.candidate_id = candidate_id;
    a.label = s.label;
    a.annotator = annotator;
    a.source = AnnotationSource::kModelApproved;
    return store_.record(std::move(a));
  }

  /// Rebuilds examples from the latest annotations, trains a new version and
  /// swaps it in. The previous version stays active on any failure.
  ModelVersion retrain(std::optional<std::uint64_t> seed = std::nullopt,
                       const std::optional<TrainingFilter>& filter = std::nullopt) {
    if (filter) filter->validate();
    if (retraining_.exchange(true)) throw BusyError("retrain already in progress");
    struct Reset {
      std::atomic<bool>& flag;
      ~Reset() { flag = false; }
    } reset{retraining_};

    std::vector<LabeledExample> examples;
    for (const auto& [c, a] : store_.labeled()) {
      examples.push_back({featurize(c.window, embeddings_, config_.lookup), a.label, c.id, c.violent_word, c.network});
    }
    std::size_t positives = 0;
    for (const auto& e : examples) positives += e.label;
    if (positives == 0 || positives == examples.size()) {
      throw ConflictError("retrain needs both classes among annotations");
    }

    const std::uint64_t version = registry_.next_version();
    const std::uint64_t run_seed = seed.value_or(config_.base_seed + version);
    DatasetSplits splits;
    try {
      splits = split_dataset(std::move(examples), run_seed);
    } catch (const ValidationError& e) {
      throw ConflictError(std::string("not enough annotations: ") + e.what());
    }
    if (filter) {
      std::erase_if(splits.train, [&](const LabeledExample& e) { return !filter->matches(e); });
      std::erase_if(splits.validation, [&](const LabeledExample& e) { return !filter->matches(e); });
      if (splits.train.empty() || splits.validation.empty()) {
        throw ConflictError("no annotations match " + filter->group_by + "=" + filter->value);
      }
    }
    std::vector<LabeledExample> balanced;
    try {
      balanced = balance_by_resampling(splits.train, run_seed);
    } catch (const ValidationError& e) {
      throw ConflictError(std::string("training split is single-class: ") + e.what());
    }

    ModelConfig mc = config_.model;
    mc.init_seed = run_seed;
    TrainConfig tc = config_.training;
    tc.train_seed = run_seed;
    auto result = train(init_network<float>(mc), std::span(balanced), std::span(splits.validation), tc);
    if (result.history.stop_reason == StopReason::kDiverged) throw ConflictError("training diverged; keeping active model");

    auto model = std::make_shared<ActiveModel>();
    model->network = std::move(result.network);
    model->held_out.scores = predict_batch(model->network, std::span(splits.test));
    for (const auto& e : splits.test) {
      model->held_out.labels.push_back(e.label);
      model->held_out.violent_words.push_back(e.violent_word);
      model->held_out.networks.push_back(e.network);
    }
    model->info = {version, balanced.size(), evaluate(model->held_out.scores, model->held_out.labels), utc_timestamp(),
                   run_seed};
    const auto info = model->info;
    registry_.publish(std::move(model));
    return info;
  }

  /// Held-out metrics of the active model split by `violent_word` or `network`.
  std::map<std::string, MetricsRecord> grouped_metrics(const std::string& group_by) const {
    const auto model = registry_.active();
    if (!model) throw ConflictError("cold start: no active model");
    const std::vector<std::string>* keys = nullptr;
    if (group_by == "violent_word") keys = &model->held_out.violent_words;
    else if (group_by == "network") keys = &model->held_out.networks;
    else throw ValidationError("group_by must be violent_word or network");
    return evaluate_subsets(model->held_out.scores, model->held_out.labels, *keys);
  }

 private:
  AnnotationStore& store_;
  ModelRegistry& registry_;
  const EmbeddingTable& embeddings_;
  ServiceConfig config_;
  std::atomic<bool> retraining_{false};
};

}  // namespace metanet
