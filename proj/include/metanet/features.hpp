#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "metanet/binary_io.hpp"
#include "metanet/corpus.hpp"
#include "metanet/embed.hpp"
#include "metanet/error.hpp"
#include "metanet/rng.hpp"

namespace metanet {

using FeatureVector = std::vector<float>;

struct LabeledExample {
  FeatureVector features;
  int label = 0;
  std::string id;
  std::string violent_word;
  std::string network;
};

struct DatasetSplits {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> validation;
  std::vector<LabeledExample> test;
  std::uint64_t seed = 0;
};

/// Concatenates the slot embeddings; padding and OOV slots stay zero.
inline FeatureVector featurize(const TokenWindow& window, const EmbeddingTable& table,
                               const LookupPolicy& policy = {}) {
  const std::size_t dim = table.dim();
  FeatureVector out(kWindowSize * dim, 0.0f);
  for (std::size_t s = 0; s < kWindowSize; ++s) {
    if (window.slots[s].empty()) continue;
    if (auto row = table.find(window.slots[s], policy)) {
      auto src = table.row(*row);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(s * dim));
    }
  }
  return out;
}

inline LabeledExample make_example(const GoldRecord& r, const EmbeddingTable& table, const LookupPolicy& policy = {},
                                   const SurfaceForms& forms = SurfaceForms::defaults()) {
  return {featurize(window_for(r, forms), table, policy), r.label ? 1 : 0, r.id,
          std::string(to_string(r.violent_word)), std::string(to_string(r.network))};
}

inline std::vector<LabeledExample> build_examples(const std::vector<GoldRecord>& records,
                                                  const EmbeddingTable& table, const LookupPolicy& policy = {},
                                                  const SurfaceForms& forms = SurfaceForms::defaults()) {
  std::vector<LabeledExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(make_example(r, table, policy, forms));
  return out;
}

/// Seeded shuffle, then test = floor(N/5) and validation = floor(rest/5).
inline DatasetSplits split_dataset(std::vector<LabeledExample> examples, std::uint64_t seed) {
  const std::size_t n = examples.size();
  const std::size_t n_test = n / 5;
  const std::size_t n_val = (n - n_test) / 5;
  if (n_test == 0 || n_val == 0 || n - n_test - n_val == 0) {
    throw ValidationError("cannot form three non-empty splits from " + std::to_string(n) + " examples");
  }
  Rng rng(seed);
  rng.shuffle(std::span(examples));
  DatasetSplits s;
  s.seed = seed;
  auto first = std::make_move_iterator(examples.begin());
  s.test.assign(first, first + static_cast<std::ptrdiff_t>(n_test));
  s.validation.assign(first + static_cast<std::ptrdiff_t>(n_test), first + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(first + static_cast<std::ptrdiff_t>(n_test + n_val), std::make_move_iterator(examples.end()));
  return s;
}

/// Appends minority-class rows drawn with replacement until the classes are equal.
/// The original rows keep their order at the front.
inline std::vector<LabeledExample> balance_by_resampling(std::vector<LabeledExample> train, std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int y = train[i].label;
    if (y != 0 && y != 1) throw ValidationError("label must be 0 or 1, got " + std::to_string(y));
    by_class[y].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw ValidationError("cannot balance: class " + std::string(by_class[0].empty() ? "0" : "1") + " absent");
  }
  const auto& minority = by_class[0].size() < by_class[1].size() ? by_class[0] : by_class[1];
  const std::size_t deficit = std::max(by_class[0].size(), by_class[1].size()) - minority.size();
  Rng rng(seed);
  train.reserve(train.size() + deficit);
  for (std::size_t k = 0; k < deficit; ++k) {
    train.push_back(train[minority[rng.index(minority.size())]]);
  }
  return train;
}

/// Cached featurized dataset: u64 count, u32 feature length, then per example
/// a label byte, u32 id length, id bytes and the features as binary32.
inline std::uint64_t write_feature_cache(const std::vector<LabeledExample>& examples, std::ostream& out) {
  detail::LeWriter w(out);
  const std::uint32_t len = examples.empty() ? 0 : static_cast<std::uint32_t>(examples.front().features.size());
  w.put<std::uint64_t>(examples.size());
  w.put<std::uint32_t>(len);
  for (const auto& e : examples) {
    if (e.features.size() != len) throw ValidationError("inconsistent feature length in cache write");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.label));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.id.size()));
    w.text(e.id);
    for (float v : e.features) w.put(v);
  }
  return w.written();
}

inline std::vector<LabeledExample> read_feature_cache(std::istream& in) {
  detail::LeReader r(in);
  const auto count = r.get<std::uint64_t>("cache header");
  const auto len = r.get<std::uint32_t>("cache header");
  std::vector<LabeledExample> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledExample e;
    const auto label = r.get<std::uint8_t>("label");
    if (label > 1) throw FormatError("label byte must be 0 or 1", r.offset() - 1);
    e.label = label;
    e.id.resize(r.get<std::uint32_t>("id length"));
    r.raw(e.id.data(), e.id.size(), "id");
    e.features.resize(len);
    r.raw(e.features.data(), len * sizeof(float), "features");
    for (auto& v : e.features) v = detail::byteswap_if_big(v);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace metanet
