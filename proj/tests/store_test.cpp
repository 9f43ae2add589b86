#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <thread>

#include "metanet/store.hpp"
#include "test_util.hpp"

using namespace metanet;

namespace {

Candidate cand(const std::string& id) {
  Candidate c{id, "CNN", "AC360", "2012-10-17", "attack", {}};
  c.window.slots[5] = "attack";
  c.window.slots[6] = "ads";
  return c;
}

Annotation ann(const std::string& id, int label, AnnotationSource src = AnnotationSource::kHuman) {
  Annotation a;
  a.candidate_id = id;
  a.label = label;
  a.annotator = "tester";
  a.source = src;
  return a;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Store, RecordLatestAndPending) {
  test::TempDir dir("store");
  AnnotationStore store(dir.path());
  EXPECT_EQ(store.add_candidates({cand("a"), cand("b"), cand("c")}), 3u);
  EXPECT_EQ(store.add_candidates({cand("a")}), 0u);
  EXPECT_EQ(store.pending_count(), 3u);

  const auto id1 = store.record(ann("b", 1, AnnotationSource::kModelApproved));
  EXPECT_EQ(store.pending_count(), 2u);
  EXPECT_EQ(store.pending()[0].id, "a");
  EXPECT_EQ(store.pending(1).size(), 1u);
  EXPECT_EQ(store.latest("b")->source, AnnotationSource::kModelApproved);

  const auto id2 = store.record(ann("b", 0));
  EXPECT_GT(id2, id1);
  EXPECT_EQ(store.latest("b")->label, 0);
  const auto hist = store.history("b");
  ASSERT_EQ(hist.size(), 2u);
  EXPECT_EQ(hist[0].label, 1);
  EXPECT_EQ(hist[1].label, 0);
  EXPECT_FALSE(hist[0].timestamp.empty());
}

TEST(Store, Validation) {
  test::TempDir dir("store");
  AnnotationStore store(dir.path());
  store.add_candidates({cand("a")});
  EXPECT_THROW(store.record(ann("nope", 1)), NotFoundError);
  EXPECT_THROW(store.record(ann("a", 2)), ValidationError);
  auto anon = ann("a", 1);
  anon.annotator.clear();
  EXPECT_THROW(store.record(anon), ValidationError);
  EXPECT_THROW(store.add_candidates({cand("")}), ValidationError);
  EXPECT_EQ(line_count(store.annotations_path()), 0u);
}

TEST(Store, ReopenReconstructsState) {
  test::TempDir dir("store");
  AnnotationStore::LatestMap before;
  {
    AnnotationStore store(dir.path(), 0);
    store.add_candidates({cand("a"), cand("b")});
    store.record(ann("a", 1));
    store.record(ann("b", 0));
    store.record(ann("a", 0));
    before = store.latest_map();
  }
  AnnotationStore again(dir.path());
  EXPECT_EQ(again.latest_map(), before);
  EXPECT_EQ(again.candidate_count(), 2u);
  EXPECT_EQ(again.candidate("a"), cand("a"));
  EXPECT_GT(again.record(ann("b", 1)), before.at("a").seq);
}

TEST(Store, SnapshotPlusTailEqualsFullReplay) {
  test::TempDir dir("store");
  Rng rng(4);
  {
    AnnotationStore store(dir.path(), 7);  // snapshot every 7 records
    std::vector<Candidate> cs;
    for (int i = 0; i < 10; ++i) cs.push_back(cand("c" + std::to_string(i)));
    store.add_candidates(cs);
    for (int i = 0; i < 40; ++i) store.record(ann("c" + std::to_string(rng.index(10)), static_cast<int>(rng.index(2))));
  }
  ASSERT_TRUE(std::filesystem::exists(dir.path() / "snapshot.json"));
  AnnotationStore reopened(dir.path());
  EXPECT_EQ(reopened.latest_map(), AnnotationStore::replay_log(dir.path() / "annotations.jsonl"));
}

TEST(Store, ConcurrentWritersSerialize) {
  test::TempDir dir("store");
  AnnotationStore store(dir.path(), 16);
  store.add_candidates({cand("a"), cand("b")});
  std::vector<std::thread> threads;
  std::vector<std::vector<std::uint64_t>> ids(4);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) ids[t].push_back(store.record(ann(i % 2 ? "a" : "b", t % 2)));
    });
  }
  for (auto& th : threads) th.join();
  std::set<std::uint64_t> all;
  for (const auto& v : ids) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(line_count(store.annotations_path()), 100u);
  EXPECT_EQ(store.latest_map(), AnnotationStore::replay_log(store.annotations_path()));
}

TEST(Store, CandidatesFromGoldAndTranscripts) {
  GoldRecord r;
  r.id = "g1";
  r.network = NewsNetwork::kMsnbc;
  r.show = "Hardball";
  r.airing_date = *parse_date("2012-10-04");
  r.violent_word = ViolentWord::kAttack;
  r.text = "Romney attacks Obama on taxes";
  const auto c = candidate_from_gold(r);
  EXPECT_EQ(c.window.center(), "attacks");
  EXPECT_EQ(c.window.slots[4], "Romney");
  EXPECT_EQ(c.network, "MSNBC");

  const auto path = test::fixture("transcripts/FOXNEWS_Hannity_2012-10-23.txt");
  const auto meta = parse_transcript_name(path);
  for (const auto& inst : ingest_transcript(path)) {
    const auto tc = candidate_from_instance(inst, meta);
    EXPECT_TRUE(tc.id.starts_with("FOXNEWS_Hannity_2012-10-23:"));
    EXPECT_EQ(tc.network, "FOXNEWS");
    EXPECT_FALSE(tc.window.center().empty());
  }
}
