#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metanet/binary_io.hpp"
#include "metanet/error.hpp"

namespace metanet {

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t min_for[] = {0, 0x80, 0x800, 0x10000};
    if (cp < min_for[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace detail

/// Fallback chain for token lookup: exact, then lowercase, then the zero vector.
struct LookupPolicy {
  bool lowercase_fallback = true;
};

/// Immutable-after-load vocabulary and row-major float matrix.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ValidationError("embedding dim must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::span<const float> matrix() const { return matrix_; }

  /// Number of entries dropped while loading because the token was not UTF-8.
  std::size_t skipped_tokens() const { return skipped_; }

  std::span<const float> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }

  std::optional<std::size_t> index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool add(std::string token, std::span<const float> vec) {
    if (vec.size() != dim_) throw ValidationError("vector length " + std::to_string(vec.size()) + " != dim " + std::to_string(dim_));
    auto [it, inserted] = index_.emplace(token, tokens_.size());
    if (!inserted) return false;
    tokens_.push_back(std::move(token));
    matrix_.insert(matrix_.end(), vec.begin(), vec.end());
    return true;
  }

  /// Row index under the policy's fallback chain, or nullopt for OOV.
  std::optional<std::size_t> find(std::string_view token, const LookupPolicy& policy = {}) const {
    if (auto i = index_of(token)) return i;
    if (policy.lowercase_fallback) return index_of(detail::ascii_lower(token));
    return std::nullopt;
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.tokens_ == b.tokens_ && a.matrix_.size() == b.matrix_.size() &&
           std::memcmp(a.matrix_.data(), b.matrix_.data(), a.matrix_.size() * sizeof(float)) == 0;
  }

 private:
  friend EmbeddingTable load_word2vec(std::istream&, std::optional<std::size_t>);

  std::size_t dim_ = 0;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> matrix_;
  std::size_t skipped_ = 0;
};

/// Looked-up vector for `token`; the zero vector when nothing matches.
inline std::vector<float> lookup(const EmbeddingTable& table, std::string_view token,
                                 const LookupPolicy& policy = {}) {
  if (auto i = table.find(token, policy)) {
    auto r = table.row(*i);
    return {r.begin(), r.end()};
  }
  return std::vector<float>(table.dim(), 0.0f);
}

/// Parses the word2vec binary format. Reads at most `max_words` entries.
/// Throws FormatError on a bad header, truncated payload or duplicate token.
inline EmbeddingTable load_word2vec(std::istream& in, std::optional<std::size_t> max_words = std::nullopt) {
  std::uint64_t offset = 0;
  std::string header;
  for (int c; (c = in.get()) != '\n';) {
    if (c == EOF) throw FormatError("malformed header: missing newline", offset);
    header.push_back(static_cast<char>(c));
    ++offset;
    if (header.size() > 64) throw FormatError("malformed header: too long", offset);
  }
  ++offset;

  std::uint64_t vocab = 0, dim = 0;
  {
    const char* p = header.c_str();
    char* end = nullptr;
    auto parse_uint = [&](std::uint64_t& out) {
      if (!std::isdigit(static_cast<unsigned char>(*p))) return false;
      out = std::strtoull(p, &end, 10);
      p = end;
      return true;
    };
    if (!parse_uint(vocab) || *p != ' ') throw FormatError("malformed header '" + header + "'", 0);
    ++p;
    if (!parse_uint(dim) || *p != '\0') throw FormatError("malformed header '" + header + "'", 0);
    if (dim == 0) throw FormatError("malformed header: dim is zero", 0);
  }

  EmbeddingTable table(static_cast<std::size_t>(dim));
  const std::uint64_t limit = max_words ? std::min<std::uint64_t>(vocab, *max_words) : vocab;
  table.tokens_.reserve(limit);
  table.matrix_.reserve(limit * dim);

  std::vector<float> vec(dim);
  std::string token;
  for (std::uint64_t entry = 0; entry < limit; ++entry) {
    token.clear();
    const std::uint64_t token_offset = offset;
    for (;;) {
      const int c = in.get();
      if (c == EOF) throw FormatError("truncated token in entry " + std::to_string(entry), offset);
      ++offset;
      if (c == ' ') break;
      if (c == '\n' && token.empty()) continue;  // trailing newline of the previous vector
      token.push_back(static_cast<char>(c));
    }
    in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(dim * sizeof(float)));
    const auto got = static_cast<std::uint64_t>(in.gcount());
    if (got != dim * sizeof(float)) {
      throw FormatError("truncated vector payload for '" + token + "'", offset + got);
    }
    offset += got;
    for (auto& v : vec) v = detail::byteswap_if_big(v);
    if (in.peek() == '\n') {
      in.get();
      ++offset;
    }

    if (!detail::valid_utf8(token)) {
      ++table.skipped_;
      continue;
    }
    if (!table.add(token, vec)) {
      throw FormatError("duplicate token '" + token + "' in entry " + std::to_string(entry), token_offset);
    }
  }
  return table;
}

/// Emits the word2vec binary format with a newline after each vector.
inline std::uint64_t write_word2vec(const EmbeddingTable& table, std::ostream& out) {
  detail::LeWriter w(out);
  w.text(std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n");
  for (std::size_t i = 0; i < table.size(); ++i) {
    w.text(table.tokens()[i]);
    w.put<char>(' ');
    for (float v : table.row(i)) w.put(v);
    w.put<char>('\n');
  }
  out.flush();
  if (!out) throw IoError("flush failed");
  return w.written();
}

}  // namespace metanet
