#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "metanet/serve.hpp"
#include "test_util.hpp"

using namespace metanet;

namespace {

EmbeddingTable fixture_table() {
  std::ifstream in(test::fixture("embeddings_fixture.bin"), std::ios::binary);
  return load_word2vec(in);
}

std::vector<GoldRecord> fixture_gold() {
  std::ifstream in(test::fixture("gold_fixture.csv"));
  return parse_gold_csv(in);
}

ServiceConfig quick_config() {
  ServiceConfig cfg;
  cfg.model.hidden_width = 32;
  cfg.training.max_epochs = 40;
  cfg.training.patience = 5;
  cfg.base_seed = 3;
  return cfg;
}

/// Store seeded with the fixture gold corpus; `annotated` rows carry their gold label.
void seed_store(AnnotationStore& store, std::size_t annotated, bool only_positive = false) {
  const auto gold = fixture_gold();
  std::vector<Candidate> cands;
  for (const auto& r : gold) cands.push_back(candidate_from_gold(r));
  store.add_candidates(cands);
  std::size_t n = 0;
  for (const auto& r : gold) {
    if (n >= annotated) break;
    if (only_positive && !r.label) continue;
    store.record({0, r.id, r.label ? 1 : 0, r.subject, r.object, "gold", "", AnnotationSource::kHuman});
    ++n;
  }
}

struct Fixture {
  test::TempDir dir{"serve"};
  EmbeddingTable table = fixture_table();
  AnnotationStore store{dir.path()};
  ModelRegistry registry{dir.path() / "models"};
  SuggestionService service{store, registry, table, quick_config()};
};

}  // namespace

TEST(Suggestion, ThresholdRule) {
  auto s = make_suggestion(0.97, 0.9, 1);
  EXPECT_EQ(s.label, 1);
  EXPECT_DOUBLE_EQ(s.confidence, 0.97);
  EXPECT_TRUE(s.offered);
  s = make_suggestion(0.55, 0.9, 1);
  EXPECT_EQ(s.label, 1);
  EXPECT_DOUBLE_EQ(s.confidence, 0.55);
  EXPECT_FALSE(s.offered);
  s = make_suggestion(0.1, 0.9, 1);
  EXPECT_EQ(s.label, 0);
  EXPECT_DOUBLE_EQ(s.confidence, 0.9);
  EXPECT_TRUE(s.offered);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto t = make_suggestion(rng.uniform(), 0.5, 1);
    EXPECT_TRUE(t.offered);
    EXPECT_GE(t.confidence, 0.5);
    const double thr = rng.uniform(0.5, 1.0);
    const auto u = make_suggestion(rng.uniform(), thr, 1);
    EXPECT_EQ(u.offered, u.confidence >= thr);
  }
}

TEST(Service, ColdStart) {
  Fixture f;
  seed_store(f.store, 0);
  TokenWindow w;
  w.slots[5] = "attack";
  EXPECT_THROW(f.service.suggest(w), ConflictError);
  EXPECT_FALSE(f.service.try_suggest(w).has_value());
  EXPECT_THROW(f.service.grouped_metrics("network"), ConflictError);
}

TEST(Service, SingleClassRetrainLeavesVersionUnchanged) {
  Fixture f;
  seed_store(f.store, 20, true);
  EXPECT_THROW(f.service.retrain(), ConflictError);
  EXPECT_EQ(f.registry.active(), nullptr);
  EXPECT_EQ(f.registry.next_version(), 1u);
}

TEST(Service, RetrainSuggestApproveLoop) {
  Fixture f;
  seed_store(f.store, 200);
  const auto v1 = f.service.retrain();
  EXPECT_EQ(v1.version, 1u);
  EXPECT_GT(v1.training_size, 0u);
  ASSERT_TRUE(v1.metrics.auc.has_value());
  EXPECT_EQ(f.registry.active()->info.version, 1u);

  const auto pending = f.store.pending();
  ASSERT_EQ(pending.size(), 100u);
  const auto before = f.store.latest_map();
  const auto s = f.service.suggest_for(pending[0].id);
  EXPECT_EQ(s.model_version, 1u);
  EXPECT_EQ(f.store.latest_map(), before);  // suggestions are read-only
  EXPECT_EQ(f.store.pending_count(), 100u);

  f.service.approve(pending[0].id, "ann");
  const auto latest = f.store.latest(pending[0].id);
  ASSERT_TRUE(latest.has_value());
  EXPECT_EQ(latest->source, AnnotationSource::kModelApproved);
  EXPECT_EQ(latest->label, s.label);
  EXPECT_EQ(f.store.pending_count(), 99u);

  const auto groups = f.service.grouped_metrics("violent_word");
  EXPECT_EQ(groups.size(), 3u);
  EXPECT_TRUE(groups.count("attack"));
  EXPECT_EQ(f.service.grouped_metrics("network").size(), 3u);
  EXPECT_THROW(f.service.grouped_metrics("show"), ValidationError);

  const auto v2 = f.service.retrain();
  EXPECT_EQ(v2.version, 2u);

  ModelRegistry reopened(f.dir.path() / "models");
  ASSERT_NE(reopened.active(), nullptr);
  EXPECT_EQ(reopened.active()->info.version, 2u);
  EXPECT_EQ(predict(reopened.active()->network, std::vector<float>(176, 0.1f)),
            predict(f.registry.active()->network, std::vector<float>(176, 0.1f)));
  EXPECT_THROW(f.service.suggest_for("missing"), NotFoundError);
}

TEST(Service, RetrainSameSeedSameMetrics) {
  Fixture f;
  seed_store(f.store, 150);
  const auto a = f.service.retrain(42);
  const auto b = f.service.retrain(42);
  EXPECT_EQ(b.version, a.version + 1);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.seed, 42u);
}

TEST(Service, SwapIsAtomicForConcurrentReaders) {
  Fixture f;
  seed_store(f.store, 200);
  f.service.retrain();
  TokenWindow w = f.store.pending()[0].window;
  std::atomic<bool> done{false};
  std::atomic<bool> monotone{true};
  std::atomic<int> calls{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      std::uint64_t last = 0;
      while (!done) {
        const auto s = f.service.suggest(w);
        if (s.model_version < last || s.model_version < 1 || s.model_version > 3) monotone = false;
        last = s.model_version;
        ++calls;
      }
    });
  }
  f.service.retrain();
  f.service.retrain();
  done = true;
  for (auto& r : readers) r.join();
  EXPECT_TRUE(monotone);
  EXPECT_GT(calls.load(), 0);
  EXPECT_EQ(f.registry.active()->info.version, 3u);
}

TEST(Service, ConcurrentRetrainIsBusy) {
  Fixture f;
  seed_store(f.store, 250);
  std::thread first([&] { f.service.retrain(); });
  while (!f.service.retraining()) std::this_thread::yield();
  EXPECT_THROW(f.service.retrain(), BusyError);
  first.join();
  EXPECT_EQ(f.registry.active()->info.version, 1u);
}

TEST(Service, ThresholdValidated) {
  test::TempDir dir("serve");
  const auto table = fixture_table();
  AnnotationStore store(dir.path());
  ModelRegistry registry(dir.path() / "models");
  auto cfg = quick_config();
  cfg.offer_threshold = 0.3;
  EXPECT_THROW(SuggestionService(store, registry, table, cfg), ValidationError);
}

TEST(Service, FilteredTrainingKeepsFullHeldOut) {
  Fixture f;
  seed_store(f.store, 300);
  const auto all = f.service.retrain(9);
  const auto attack = f.service.retrain(9, TrainingFilter{"violent_word", "attack"});
  EXPECT_LT(attack.training_size, all.training_size);
  // Same seed, same split: the held-out rows cover every violent word either way.
  EXPECT_EQ(f.service.grouped_metrics("violent_word").size(), 3u);
  EXPECT_NE(attack.metrics, all.metrics);
  EXPECT_THROW(f.service.retrain(9, TrainingFilter{"violent_word", "punch"}), ConflictError);
  EXPECT_THROW(f.service.retrain(9, TrainingFilter{"show", "Hardball"}), ValidationError);
  EXPECT_EQ(f.registry.active()->info.version, 2u);
}
