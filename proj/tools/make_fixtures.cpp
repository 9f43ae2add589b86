// Regenerates the bundled fixture corpus: a 300-row gold CSV, a 50-word
// embedding table and a few transcripts. Output is deterministic.

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "metanet/corpus.hpp"
#include "metanet/embed.hpp"
#include "metanet/rng.hpp"

namespace {

const std::vector<std::string> kViolent = {"hit",     "hits",    "hitting", "beat",     "beats",
                                           "beating", "attack",  "attacks", "attacked", "attacking"};
const std::vector<std::string> kPolitical = {"obama",  "romney", "debate",    "campaign", "ads",    "poll",
                                             "candidate", "president", "ryan",  "biden",  "senate", "voters",
                                             "plan",   "policy", "economy",   "tonight"};
const std::vector<std::string> kPhysical = {"police",  "soldiers", "bomb",  "embassy", "storm",
                                            "car",     "hurricane", "gunman", "troops", "libya",
                                            "officer", "victim",   "hospital", "killed", "city"};
const std::vector<std::string> kFunction = {"the", "a", "was", "in", "on", "with", "over", "after", "said"};
const std::vector<std::string> kUnknown = {"uh", "folks", "really", "know"};

struct Show {
  metanet::NewsNetwork network;
  const char* name;
};
const std::array<Show, 6> kShows = {{{metanet::NewsNetwork::kMsnbc, "Hardball"},
                                     {metanet::NewsNetwork::kMsnbc, "The Rachel Maddow Show"},
                                     {metanet::NewsNetwork::kCnn, "Anderson Cooper 360"},
                                     {metanet::NewsNetwork::kCnn, "Piers Morgan Tonight"},
                                     {metanet::NewsNetwork::kFoxNews, "The O'Reilly Factor"},
                                     {metanet::NewsNetwork::kFoxNews, "Hannity"}}};

template <typename T>
const T& pick(metanet::Rng& rng, const std::vector<T>& v) {
  return v[rng.index(v.size())];
}

std::string sentence(metanet::Rng& rng, bool metaphor, const std::string& violent) {
  const std::size_t len = 8 + rng.index(9);
  const std::size_t at = 1 + rng.index(len - 2);
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    std::string w;
    if (i == at) {
      w = violent;
    } else {
      const double u = rng.uniform();
      const bool own_context = rng.bernoulli(0.8);
      if (u < 0.35) w = pick(rng, kFunction);
      else if (u < 0.42) w = pick(rng, kUnknown);
      else w = pick(rng, metaphor == own_context ? kPolitical : kPhysical);
    }
    if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += (i ? " " : "") + w;
  }
  return out + ".";
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out_dir = argc > 1 ? argv[1] : "data/fixtures";
  std::filesystem::create_directories(out_dir / "transcripts");
  metanet::Rng rng(20171201);

  constexpr std::size_t kDim = 16;
  metanet::EmbeddingTable table(kDim);
  auto add_words = [&](const std::vector<std::string>& words, double bias) {
    for (const auto& w : words) {
      std::vector<float> v(kDim);
      for (auto& x : v) x = static_cast<float>(0.5 * rng.normal());
      v[0] += static_cast<float>(bias);
      v[1] += static_cast<float>(0.5 * bias);
      table.add(w, v);
    }
  };
  add_words(kViolent, 0.0);
  add_words(kPolitical, 1.0);
  add_words(kPhysical, -1.0);
  add_words(kFunction, 0.0);
  {
    std::ofstream out(out_dir / "embeddings_fixture.bin", std::ios::binary);
    metanet::write_word2vec(table, out);
  }

  std::vector<metanet::GoldRecord> records;
  const std::array<metanet::ViolentWord, 3> lemmas = {metanet::ViolentWord::kHit, metanet::ViolentWord::kBeat,
                                                      metanet::ViolentWord::kAttack};
  for (std::size_t i = 0; i < 300; ++i) {
    metanet::GoldRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "fx-%04zu", i + 1);
    r.id = id;
    const auto& show = kShows[rng.index(kShows.size())];
    r.network = show.network;
    r.show = show.name;
    const unsigned month = 9 + static_cast<unsigned>(rng.index(3));
    const unsigned day = 1 + static_cast<unsigned>(rng.index(30));
    r.airing_date = std::chrono::year_month_day{std::chrono::year{2012}, std::chrono::month{month}, std::chrono::day{day}};
    r.violent_word = lemmas[rng.index(3)];
    r.label = rng.bernoulli(0.31);
    const std::size_t base = static_cast<std::size_t>(r.violent_word) * 3;
    const std::size_t forms = r.violent_word == metanet::ViolentWord::kAttack ? 4 : 3;
    r.text = sentence(rng, r.label, kViolent[base + rng.index(forms)]);
    if (r.label) {
      r.subject = rng.bernoulli(0.5) ? "Romney" : "Obama";
      r.object = *r.subject == "Romney" ? "Obama" : "Romney";
    }
    records.push_back(std::move(r));
  }
  {
    std::ofstream out(out_dir / "gold_fixture.csv");
    metanet::write_gold_csv(records, out);
  }

  const std::array<const char*, 3> names = {"MSNBC_Hardball_2012-10-04.txt", "CNN_Anderson_Cooper_360_2012-10-17.txt",
                                            "FOXNEWS_Hannity_2012-10-23.txt"};
  for (std::size_t f = 0; f < names.size(); ++f) {
    std::ofstream out(out_dir / "transcripts" / names[f]);
    for (std::size_t line = 0; line < 12; ++line) {
      const bool metaphor = rng.bernoulli(0.5);
      if (line % 3 == 2) {
        out << "We will be right back after this break.\n";
        continue;
      }
      out << sentence(rng, metaphor, pick(rng, kViolent)) << "\n";
    }
  }
  std::cout << "wrote fixtures to " << out_dir << "\n";
  return 0;
}
