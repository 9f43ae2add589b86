#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metanet/embed.hpp"
#include "metanet/error.hpp"

namespace metanet {

enum class NewsNetwork { kMsnbc, kCnn, kFoxNews };
enum class ViolentWord { kHit, kBeat, kAttack };

inline std::string_view to_string(NewsNetwork n) {
  switch (n) {
    case NewsNetwork::kMsnbc: return "MSNBC";
    case NewsNetwork::kCnn: return "CNN";
    case NewsNetwork::kFoxNews: return "FOXNEWS";
  }
  return "?";
}

inline std::string_view to_string(ViolentWord w) {
  switch (w) {
    case ViolentWord::kHit: return "hit";
    case ViolentWord::kBeat: return "beat";
    case ViolentWord::kAttack: return "attack";
  }
  return "?";
}

inline std::optional<NewsNetwork> parse_network(std::string_view s) {
  if (s == "MSNBC") return NewsNetwork::kMsnbc;
  if (s == "CNN") return NewsNetwork::kCnn;
  if (s == "FOXNEWS") return NewsNetwork::kFoxNews;
  return std::nullopt;
}

inline std::optional<ViolentWord> parse_violent_word(std::string_view s) {
  if (s == "hit") return ViolentWord::kHit;
  if (s == "beat") return ViolentWord::kBeat;
  if (s == "attack") return ViolentWord::kAttack;
  return std::nullopt;
}

inline std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
  int y, m, d;
  char tail;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (std::sscanf(std::string(s).c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                  std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

inline std::string format_date(const std::chrono::year_month_day& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

struct GoldRecord {
  std::string id;
  NewsNetwork network = NewsNetwork::kCnn;
  std::string show;
  std::chrono::year_month_day airing_date{};
  ViolentWord violent_word = ViolentWord::kHit;
  std::string text;
  bool label = false;  // true = metaphor
  std::optional<std::string> subject;
  std::optional<std::string> object;

  friend bool operator==(const GoldRecord&, const GoldRecord&) = default;
};

inline constexpr std::array<std::string_view, 9> kGoldColumns = {
    "id", "network", "show", "airing_date", "violent_word", "text", "label", "subject", "object"};

namespace detail {

/// Reads one RFC 4180 record. Returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  if (in.peek() == EOF) return false;
  std::string field;
  bool quoted = false, at_field_start = true;
  for (;;) {
    const int c = in.get();
    if (c == EOF) {
      if (quoted) throw FormatError("unterminated quoted field", line);
      fields.push_back(std::move(field));
      return true;
    }
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(static_cast<char>(c));
      }
      continue;
    }
    if (c == '"' && at_field_start) {
      quoted = true;
      at_field_start = false;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      at_field_start = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      ++line;
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(static_cast<char>(c));
      at_field_start = false;
    }
  }
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// Parses the gold-standard CSV. FormatError::offset() is the 1-based data row.
inline std::vector<GoldRecord> parse_gold_csv(std::istream& in) {
  std::vector<std::string> fields;
  std::size_t line = 0;
  if (!detail::read_csv_record(in, fields, line)) throw FormatError("empty gold CSV: header required", 0);
  if (!fields.empty() && fields[0].starts_with("\xEF\xBB\xBF")) fields[0].erase(0, 3);
  if (fields.size() != kGoldColumns.size() || !std::equal(fields.begin(), fields.end(), kGoldColumns.begin())) {
    throw FormatError("gold CSV header does not match schema", 0);
  }

  std::vector<GoldRecord> records;
  std::size_t row = 0;
  while (detail::read_csv_record(in, fields, line)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    auto fail = [&](const std::string& msg) -> FormatError {
      return FormatError("gold CSV row " + std::to_string(row) + ": " + msg, row);
    };
    if (fields.size() != kGoldColumns.size()) {
      throw fail("expected " + std::to_string(kGoldColumns.size()) + " fields, got " + std::to_string(fields.size()));
    }
    GoldRecord r;
    r.id = fields[0];
    if (r.id.empty()) throw fail("empty id");
    auto net = parse_network(fields[1]);
    if (!net) throw fail("unknown network '" + fields[1] + "'");
    r.network = *net;
    r.show = fields[2];
    auto date = parse_date(fields[3]);
    if (!date) throw fail("bad airing_date '" + fields[3] + "'");
    r.airing_date = *date;
    auto word = parse_violent_word(fields[4]);
    if (!word) throw fail("unknown violent_word '" + fields[4] + "'");
    r.violent_word = *word;
    r.text = fields[5];
    const std::string& lab = fields[6];
    if (lab == "1" || lab == "true") {
      r.label = true;
    } else if (lab == "0" || lab == "false") {
      r.label = false;
    } else if (lab.empty()) {
      throw fail("missing label");
    } else {
      throw fail("bad label '" + lab + "'");
    }
    if (!fields[7].empty()) r.subject = fields[7];
    if (!fields[8].empty()) r.object = fields[8];
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_gold_csv(const std::vector<GoldRecord>& records, std::ostream& out) {
  for (std::size_t i = 0; i < kGoldColumns.size(); ++i) out << (i ? "," : "") << kGoldColumns[i];
  out << '\n';
  for (const auto& r : records) {
    out << detail::csv_escape(r.id) << ',' << to_string(r.network) << ',' << detail::csv_escape(r.show) << ','
        << format_date(r.airing_date) << ',' << to_string(r.violent_word) << ',' << detail::csv_escape(r.text) << ','
        << (r.label ? "1" : "0") << ',' << detail::csv_escape(r.subject.value_or("")) << ','
        << detail::csv_escape(r.object.value_or("")) << '\n';
  }
  if (!out) throw IoError("failed writing gold CSV");
}

/// Whitespace split; leading and trailing ASCII punctuation is stripped from
/// each token so only intra-word apostrophes and hyphens survive.
inline std::vector<std::string> tokenize(std::string_view text) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  auto is_punct = [](char c) { return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c)); };
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_punct(text[b])) ++b;
    while (e > b && is_punct(text[e - 1])) --e;
    if (b < e) tokens.emplace_back(text.substr(b, e - b));
    i = j;
  }
  return tokens;
}

/// Lemma with the inflected surface forms searched for it.
struct SurfaceForms {
  std::vector<std::pair<std::string, std::vector<std::string>>> lemmas;

  static SurfaceForms defaults() {
    return {{{"hit", {"hit", "hits", "hitting"}},
             {"beat", {"beat", "beats", "beating"}},
             {"attack", {"attack", "attacks", "attacked", "attacking"}}}};
  }

  /// Lemma whose forms contain `token` (case-insensitive).
  std::optional<std::string_view> match(std::string_view token) const {
    const std::string lower = detail::ascii_lower(token);
    for (const auto& [lemma, forms] : lemmas) {
      for (const auto& f : forms) {
        if (f == lower) return lemma;
      }
    }
    return std::nullopt;
  }
};

struct CandidateInstance {
  std::string source_id;
  std::vector<std::string> tokens;
  std::size_t index = 0;
  std::string lemma;
};

inline std::vector<CandidateInstance> extract_candidates(const std::vector<std::string>& tokens,
                                                         const SurfaceForms& forms = SurfaceForms::defaults(),
                                                         std::string_view source_id = {}) {
  if (forms.lemmas.empty()) throw ValidationError("surface form map is empty");
  std::vector<CandidateInstance> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (auto lemma = forms.match(tokens[i])) {
      out.push_back({std::string(source_id), tokens, i, std::string(*lemma)});
    }
  }
  return out;
}

inline constexpr std::size_t kWindowSize = 11;
inline constexpr std::size_t kWindowCenter = 5;

/// Eleven token slots centered on the matched word; empty string is padding.
struct TokenWindow {
  std::array<std::string, kWindowSize> slots;

  const std::string& center() const { return slots[kWindowCenter]; }
  friend bool operator==(const TokenWindow&, const TokenWindow&) = default;
};

inline TokenWindow build_window(const std::vector<std::string>& tokens, std::size_t index) {
  if (index >= tokens.size()) {
    throw ValidationError("window index " + std::to_string(index) + " out of range for " +
                          std::to_string(tokens.size()) + " tokens");
  }
  if (tokens[index].empty()) throw ValidationError("window center token is empty");
  TokenWindow w;
  for (std::size_t s = 0; s < kWindowSize; ++s) {
    const auto pos = static_cast<std::ptrdiff_t>(index) + static_cast<std::ptrdiff_t>(s) -
                     static_cast<std::ptrdiff_t>(kWindowCenter);
    if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(tokens.size())) w.slots[s] = tokens[static_cast<std::size_t>(pos)];
  }
  return w;
}

/// Window around the first occurrence of the record's violent word.
inline TokenWindow window_for(const GoldRecord& r, const SurfaceForms& forms = SurfaceForms::defaults()) {
  const auto tokens = tokenize(r.text);
  for (const auto& c : extract_candidates(tokens, forms)) {
    if (c.lemma == to_string(r.violent_word)) return build_window(tokens, c.index);
  }
  throw ValidationError("record '" + r.id + "': violent word '" + std::string(to_string(r.violent_word)) +
                        "' not found in text");
}

struct TranscriptMeta {
  NewsNetwork network = NewsNetwork::kCnn;
  std::string show;
  std::chrono::year_month_day date{};
  std::string stem;
};

/// Parses `<network>_<show>_<date>.txt`; the show part may itself contain underscores.
inline TranscriptMeta parse_transcript_name(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  const auto first = stem.find('_');
  const auto last = stem.rfind('_');
  if (path.extension() != ".txt" || first == std::string::npos || last == first) {
    throw ValidationError("transcript name must be <network>_<show>_<date>.txt: " + path.filename().string());
  }
  auto net = parse_network(stem.substr(0, first));
  auto date = parse_date(stem.substr(last + 1));
  if (!net || !date) throw ValidationError("bad transcript name: " + path.filename().string());
  return {*net, stem.substr(first + 1, last - first - 1), *date, stem};
}

/// Candidate instances found in a transcript file. Source ids are `<stem>:<line>`.
inline std::vector<CandidateInstance> ingest_transcript(const std::filesystem::path& path,
                                                        const SurfaceForms& forms = SurfaceForms::defaults()) {
  const auto meta = parse_transcript_name(path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<CandidateInstance> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    auto found = extract_candidates(tokenize(line), forms, meta.stem + ":" + std::to_string(n));
    std::move(found.begin(), found.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace metanet
