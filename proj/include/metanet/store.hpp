#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "metanet/corpus.hpp"
#include "metanet/error.hpp"

namespace metanet {

enum class AnnotationSource { kHuman, kModelApproved };

inline std::string_view to_string(AnnotationSource s) {
  return s == AnnotationSource::kHuman ? "human" : "model_approved";
}

inline std::optional<AnnotationSource> parse_source(std::string_view s) {
  if (s == "human") return AnnotationSource::kHuman;
  if (s == "model_approved") return AnnotationSource::kModelApproved;
  return std::nullopt;
}

/// A candidate phrase awaiting (or holding) a label.
struct Candidate {
  std::string id;
  std::string network;
  std::string show;
  std::string date;
  std::string violent_word;
  TokenWindow window;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct Annotation {
  std::uint64_t seq = 0;  // assigned by the store, strictly increasing
  std::string candidate_id;
  int label = 0;
  std::optional<std::string> subject;
  std::optional<std::string> object;
  std::string annotator;
  std::string timestamp;
  AnnotationSource source = AnnotationSource::kHuman;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const Candidate& c) {
  return {{"id", c.id},           {"network", c.network}, {"show", c.show}, {"date", c.date},
          {"violent_word", c.violent_word}, {"tokens", c.window.slots}};
}

inline Candidate candidate_from_json(const nlohmann::json& j) {
  Candidate c;
  c.id = j.at("id").get<std::string>();
  c.network = j.value("network", "");
  c.show = j.value("show", "");
  c.date = j.value("date", "");
  c.violent_word = j.value("violent_word", "");
  const auto& tokens = j.at("tokens");
  if (!tokens.is_array() || tokens.size() != kWindowSize) throw ValidationError("tokens must hold 11 strings");
  for (std::size_t i = 0; i < kWindowSize; ++i) c.window.slots[i] = tokens[i].get<std::string>();
  if (c.window.center().empty()) throw ValidationError("center token must be non-empty");
  return c;
}

inline nlohmann::json to_json(const Annotation& a) {
  nlohmann::json j = {{"seq", a.seq},
                      {"candidate_id", a.candidate_id},
                      {"label", a.label},
                      {"annotator", a.annotator},
                      {"timestamp", a.timestamp},
                      {"source", to_string(a.source)}};
  j["subject"] = a.subject ? nlohmann::json(*a.subject) : nlohmann::json(nullptr);
  j["object"] = a.object ? nlohmann::json(*a.object) : nlohmann::json(nullptr);
  return j;
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
  Annotation a;
  a.seq = j.value("seq", std::uint64_t{0});
  a.candidate_id = j.at("candidate_id").get<std::string>();
  a.label = j.at("label").get<int>();
  auto opt = [&](const char* k) -> std::optional<std::string> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<std::string>();
  };
  a.subject = opt("subject");
  a.object = opt("object");
  a.annotator = j.value("annotator", "");
  a.timestamp = j.value("timestamp", "");
  auto src = parse_source(j.value("source", "human"));
  if (!src) throw ValidationError("source must be human or model_approved");
  a.source = *src;
  return a;
}

namespace detail {

/// Appends one line and fsyncs before returning.
inline void append_durable(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + path.string() + " for append");
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      ::close(fd);
      throw IoError("write to " + path.string() + " failed");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw IoError("fsync of " + path.string() + " failed");
}

/// Writes to a temporary sibling and renames it over `path`.
inline void write_atomically(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << contents;
    out.flush();
    if (!out) throw IoError("cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

template <typename F>
void for_each_json_line(const std::filesystem::path& path, F&& f, std::uint64_t from_offset = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  in.seekg(static_cast<std::streamoff>(from_offset));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.filename().string() + " line " + std::to_string(n) + ": " + e.what(), n);
    }
  }
}

}  // namespace detail

/// Candidates plus an append-only annotation log, persisted under one
/// directory as JSON lines. The latest annotation of a candidate wins; the
/// periodic snapshot only shortcuts replay.
class AnnotationStore {
 public:
  using LatestMap = std::map<std::string, Annotation>;

  explicit AnnotationStore(std::filesystem::path dir, std::size_t snapshot_every = 256)
      : dir_(std::move(dir)), snapshot_every_(snapshot_every) {
    std::filesystem::create_directories(dir_);
    detail::for_each_json_line(candidates_path(), [&](const nlohmann::json& j) { index_candidate(candidate_from_json(j)); });
    std::uint64_t offset = 0;
    if (std::filesystem::exists(snapshot_path())) {
      std::ifstream in(snapshot_path());
      const auto snap = nlohmann::json::parse(in);
      next_seq_ = snap.at("next_seq").get<std::uint64_t>();
      offset = snap.at("log_offset").get<std::uint64_t>();
      for (const auto& a : snap.at("latest")) {
        auto ann = annotation_from_json(a);
        latest_[ann.candidate_id] = std::move(ann);
      }
    }
    detail::for_each_json_line(annotations_path(), [&](const nlohmann::json& j) { apply(annotation_from_json(j)); }, offset);
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path candidates_path() const { return dir_ / "candidates.jsonl"; }
  std::filesystem::path annotations_path() const { return dir_ / "annotations.jsonl"; }
  std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }

  /// Adds candidates not already present; returns how many were new.
  std::size_t add_candidates(const std::vector<Candidate>& candidates) {
    std::unique_lock lock(mutex_);
    std::size_t added = 0;
    for (const auto& c : candidates) {
      if (c.id.empty()) throw ValidationError("candidate id must be non-empty");
      if (by_id_.count(c.id)) continue;
      detail::append_durable(candidates_path(), to_json(c).dump());
      index_candidate(c);
      ++added;
    }
    return added;
  }

  /// Appends durably, then publishes. Returns the assigned sequence id.
  std::uint64_t record(Annotation a) {
    if (a.label != 0 && a.label != 1) throw ValidationError("label must be 0 or 1");
    if (a.annotator.empty()) throw ValidationError("annotator is required");
    std::unique_lock lock(mutex_);
    if (!by_id_.count(a.candidate_id)) throw NotFoundError("unknown candidate '" + a.candidate_id + "'");
    a.seq = next_seq_;
    if (a.timestamp.empty()) a.timestamp = utc_timestamp();
    detail::append_durable(annotations_path(), to_json(a).dump());
    apply(a);
    if (snapshot_every_ > 0 && ++since_snapshot_ >= snapshot_every_) write_snapshot_locked();
    return a.seq;
  }

  void snapshot() {
    std::unique_lock lock(mutex_);
    write_snapshot_locked();
  }

  std::optional<Candidate> candidate(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return candidates_[it->second];
  }

  std::optional<Annotation> latest(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = latest_.find(id);
    if (it == latest_.end()) return std::nullopt;
    return it->second;
  }

  LatestMap latest_map() const {
    std::shared_lock lock(mutex_);
    return latest_;
  }

  /// Unannotated candidates in insertion order.
  std::vector<Candidate> pending(std::size_t limit = SIZE_MAX) const {
    std::shared_lock lock(mutex_);
    std::vector<Candidate> out;
    for (const auto& c : candidates_) {
      if (out.size() >= limit) break;
      if (!latest_.count(c.id)) out.push_back(c);
    }
    return out;
  }

  std::size_t pending_count() const {
    std::shared_lock lock(mutex_);
    return candidates_.size() - latest_.size();
  }

  std::size_t candidate_count() const {
    std::shared_lock lock(mutex_);
    return candidates_.size();
  }

  /// Candidates with their latest annotation, in candidate insertion order.
  std::vector<std::pair<Candidate, Annotation>> labeled() const {
    std::shared_lock lock(mutex_);
    std::vector<std::pair<Candidate, Annotation>> out;
    for (const auto& c : candidates_) {
      if (auto it = latest_.find(c.id); it != latest_.end()) out.emplace_back(c, it->second);
    }
    return out;
  }

  /// Every annotation ever recorded for `id`, oldest first, read from the log.
  std::vector<Annotation> history(const std::string& id) const {
    std::shared_lock lock(mutex_);
    std::vector<Annotation> out;
    detail::for_each_json_line(annotations_path(), [&](const nlohmann::json& j) {
      if (j.at("candidate_id").get<std::string>() == id) out.push_back(annotation_from_json(j));
    });
    return out;
  }

  /// Latest-wins state rebuilt from the full log, ignoring any snapshot.
  static LatestMap replay_log(const std::filesystem::path& log) {
    LatestMap m;
    detail::for_each_json_line(log, [&](const nlohmann::json& j) {
      auto a = annotation_from_json(j);
      m[a.candidate_id] = std::move(a);
    });
    return m;
  }

 private:
  void index_candidate(Candidate c) {
    by_id_.emplace(c.id, candidates_.size());
    candidates_.push_back(std::move(c));
  }

  void apply(Annotation a) {
    next_seq_ = std::max(next_seq_, a.seq + 1);
    latest_[a.candidate_id] = std::move(a);
  }

  void write_snapshot_locked() {
    nlohmann::json latest = nlohmann::json::array();
    for (const auto& [id, a] : latest_) latest.push_back(to_json(a));
    const auto offset = std::filesystem::exists(annotations_path()) ? std::filesystem::file_size(annotations_path()) : 0;
    const nlohmann::json snap = {{"next_seq", next_seq_}, {"log_offset", offset}, {"latest", latest}};
    detail::write_atomically(snapshot_path(), snap.dump());
    since_snapshot_ = 0;
  }

  std::filesystem::path dir_;
  std::size_t snapshot_every_;
  mutable std::shared_mutex mutex_;
  std::vector<Candidate> candidates_;
  std::unordered_map<std::string, std::size_t> by_id_;
  LatestMap latest_;
  std::uint64_t next_seq_ = 1;
  std::size_t since_snapshot_ = 0;
};

inline Candidate candidate_from_gold(const GoldRecord& r, const SurfaceForms& forms = SurfaceForms::defaults()) {
  return {r.id, std::string(to_string(r.network)), r.show, format_date(r.airing_date),
          std::string(to_string(r.violent_word)), window_for(r, forms)};
}

/// Candidate for an occurrence found in a transcript; id is `<source>:<token index>`.
inline Candidate candidate_from_instance(const CandidateInstance& c, const TranscriptMeta& meta) {
  return {c.source_id + ":" + std::to_string(c.index), std::string(to_string(meta.network)), meta.show,
          format_date(meta.date), c.lemma, build_window(c.tokens, c.index)};
}

}  // namespace metanet
