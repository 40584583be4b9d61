#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medcoder/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

using namespace medcoder;

namespace {

RankerConfig tiny_config() {
  RankerConfig c;
  c.char_embedding_dim = 6;
  c.char_kernel_widths = {2, 3};
  c.char_filters = 4;
  c.word_embedding_dim = 8;
  c.hidden_units = 10;
  c.negatives_per_anchor = 2;
  c.batch_size = 4;
  c.epochs = 6;
  c.learning_rate = 5e-3;
  c.seed = 3;
  return c;
}

CodeCatalog tiny_catalog() {
  CodeCatalog c;
  c.codes = {
      {"K1", "acute kidney failure", {"renal failure", "kidney injury"}},
      {"H1", "heart failure", {"cardiac failure", "congestive failure"}},
      {"A1", "iron deficiency anemia", {"low iron anemia", "anemic state"}},
  };
  return c;
}

Vocabulary vocab_from_catalog(const CodeCatalog& catalog) {
  std::vector<std::string> docs;
  for (const auto& e : catalog.codes) {
    docs.push_back(e.description);
    for (const auto& s : e.synonyms) docs.push_back(s);
  }
  return build_vocabulary(docs, 1);
}

}  // namespace

TEST_CASE("char inventory covers pad, unk, letters and digits") {
  CHECK(char_vocab_size() == 38);
  CHECK(char_id('a') != char_id('b'));
  CHECK(char_id('z') >= 2);
  CHECK(char_id('0') >= 2);
  CHECK(char_id('9') < char_vocab_size());
  CHECK(char_id('!') == 1);  // UNK
  CHECK(char_id('A') == char_id('a'));
}

TEST_CASE("levenshtein matches known distances and DP oracle") {
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("abc", "") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("flaw", "lawn") == 2);
  CHECK(levenshtein("same", "same") == 0);

  // Random cross-check against an independent DP.
  Rng rng(17);
  std::uniform_int_distribution<int> len(0, 8), ch(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::string a, b;
    for (int i = len(rng); i > 0; --i) a.push_back(static_cast<char>('a' + ch(rng)));
    for (int i = len(rng); i > 0; --i) b.push_back(static_cast<char>('a' + ch(rng)));
    std::vector<std::vector<long>> d(a.size() + 1, std::vector<long>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<long>(i);
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<long>(j);
    for (std::size_t i = 1; i <= a.size(); ++i)
      for (std::size_t j = 1; j <= b.size(); ++j)
        d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                            d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    CHECK(levenshtein(a, b) == d[a.size()][b.size()]);
  }
}

TEST_CASE("triplet_loss matches the scalar formula on random embeddings") {
  Rng rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 6);
    const int D = 2 + static_cast<int>(rng() % 5);
    std::vector<Vector> a, p, n;
    for (int t = 0; t < T; ++t) {
      Vector va(D), vp(D), vn(D);
      for (int k = 0; k < D; ++k) {
        va[k] = g(rng);
        vp[k] = g(rng);
        vn[k] = g(rng);
      }
      a.push_back(va);
      p.push_back(vp);
      n.push_back(vn);
    }
    const double margin = 0.25 + (trial % 4) * 0.5;
    double want = 0.0;
    for (int t = 0; t < T; ++t)
      want += std::max(0.0, (a[static_cast<std::size_t>(t)] - p[static_cast<std::size_t>(t)]).norm() -
                                (a[static_cast<std::size_t>(t)] - n[static_cast<std::size_t>(t)]).norm() +
                                margin);
    want /= T;
    CHECK(triplet_loss(a, p, n, margin) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("encode yields a fixed-size embedding independent of phrase length") {
  const RankerConfig cfg = tiny_config();
  const CodeCatalog catalog = tiny_catalog();
  Rng rng(cfg.seed);
  const RankerModel model = init_ranker(cfg, vocab_from_catalog(catalog), rng);
  const Vector a = encode(model, "kidney");
  const Vector b = encode(model, "acute kidney failure with long qualifiers");
  CHECK(a.size() == cfg.output_dim());
  CHECK(b.size() == cfg.output_dim());
  CHECK((a - encode(model, "kidney")).norm() == 0.0);  // deterministic
  CHECK((a - b).norm() > 0.0);
}

TEST_CASE("char features separate different surface forms") {
  const RankerConfig cfg = tiny_config();
  Rng rng(1);
  const RankerModel model = init_ranker(cfg, vocab_from_catalog(tiny_catalog()), rng);
  const Vector x = char_features(model, "renal");
  CHECK(x.size() == cfg.char_feature_dim());
  CHECK((x - char_features(model, "renal")).norm() == 0.0);
  CHECK((x - char_features(model, "cardiac")).norm() > 0.0);
}

TEST_CASE("mine_negatives returns hard negatives that are never positives") {
  const CodeCatalog catalog = tiny_catalog();
  const std::vector<std::string> corpus = {
      "patient with acute kidney problems and mild anemia",
      "followup for congestive heart disease"};
  const SynonymCorpus mined = mine_negatives(catalog, corpus, tiny_config());
  REQUIRE(mined.entries.size() == catalog.codes.size());
  for (std::size_t e = 0; e < mined.entries.size(); ++e) {
    const auto& entry = mined.entries[e];
    CHECK(entry.code == catalog.codes[e].code);
    CHECK(entry.description == catalog.codes[e].description);
    CHECK(!entry.negatives.empty());
    CHECK(entry.negatives.size() <=
          static_cast<std::size_t>(tiny_config().negatives_per_anchor));
    const std::set<std::string> pos(entry.positives.begin(), entry.positives.end());
    for (const auto& n : entry.negatives) CHECK(pos.count(n) == 0);
  }
  // Deterministic.
  const SynonymCorpus again = mine_negatives(catalog, corpus, tiny_config());
  for (std::size_t e = 0; e < mined.entries.size(); ++e)
    CHECK(again.entries[e].negatives == mined.entries[e].negatives);
}

TEST_CASE("synonym corpus json round-trip and overlap rejection") {
  SynonymCorpus c;
  c.entries = {{"K1", "desc", {"desc", "syn"}, {"neg one", "neg two"}}};
  const SynonymCorpus d = SynonymCorpus::from_json(c.to_json());
  REQUIRE(d.entries.size() == 1);
  CHECK(d.entries[0].positives == c.entries[0].positives);
  CHECK(d.entries[0].negatives == c.entries[0].negatives);

  SynonymCorpus bad;
  bad.entries = {{"K1", "desc", {"desc", "shared"}, {"shared"}}};
  CHECK_THROWS_AS(SynonymCorpus::from_json(bad.to_json()), DataError);
}

TEST_CASE("rank_codes scores lie in [0,1] and favor the matching description") {
  RankerConfig cfg = tiny_config();
  cfg.epochs = 40;
  const CodeCatalog catalog = tiny_catalog();
  const std::vector<std::string> corpus_texts = {"unrelated text about discharge"};
  const SynonymCorpus corpus = mine_negatives(catalog, corpus_texts, cfg);

  std::vector<std::pair<std::string, int>> validation;
  for (int j = 0; j < catalog.size(); ++j)
    validation.emplace_back(catalog.codes[static_cast<std::size_t>(j)].synonyms[0], j);
  const RankerTrainResult result = train_ranker(cfg, corpus, validation);
  CHECK(result.epoch_loss.front() >= result.epoch_loss.back());

  const Vector scores =
      rank_codes(result.model, {catalog.codes[0].description}, catalog);
  REQUIRE(scores.size() == catalog.size());
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    CHECK(scores[j] >= 0.0);
    CHECK(scores[j] <= 1.0);
  }
  // A phrase identical to code 0's description must rank code 0 first.
  Eigen::Index best = 0;
  scores.maxCoeff(&best);
  CHECK(best == 0);
}

TEST_CASE("trained ranker places held-out synonyms near their codes") {
  RankerConfig cfg = tiny_config();
  cfg.epochs = 60;
  cfg.negatives_per_anchor = 3;
  const CodeCatalog full = tiny_catalog();

  // Hold out one synonym per code; train on the rest.
  CodeCatalog train_catalog = full;
  std::vector<std::pair<std::string, int>> validation;
  for (int j = 0; j < train_catalog.size(); ++j) {
    auto& syns = train_catalog.codes[static_cast<std::size_t>(j)].synonyms;
    validation.emplace_back(syns.back(), j);
    syns.pop_back();
  }
  const SynonymCorpus corpus = mine_negatives(train_catalog, {}, cfg);
  const RankerTrainResult result = train_ranker(cfg, corpus, validation);
  CHECK(result.best_validation_accuracy >= 2.0 / 3.0);
}

TEST_CASE("ranker checkpoint round-trips through disk") {
  const RankerConfig cfg = tiny_config();
  Rng rng(cfg.seed);
  const RankerModel model = init_ranker(cfg, vocab_from_catalog(tiny_catalog()), rng);
  const auto path =
      (std::filesystem::temp_directory_path() / "medcoder_ranker_ckpt.bin").string();
  model.save(path);
  const RankerModel loaded = RankerModel::load(path);
  CHECK(loaded.config.hidden_units == cfg.hidden_units);
  CHECK(loaded.word_vocab.tokens == model.word_vocab.tokens);
  const Vector a = encode(model, "kidney failure");
  const Vector b = encode(loaded, "kidney failure");
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);  // float32 storage
}

TEST_CASE("config validation rejects nonsense") {
  RankerConfig cfg = tiny_config();
  cfg.margin = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.hidden_units = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.ngram_min = 3;
  cfg.ngram_max = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
