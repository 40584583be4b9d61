#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medcoder/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

using namespace medcoder;

TEST_CASE("normalize_text lowercases, splits runs, maps digits to NUM") {
  const auto toks = normalize_text("Chest X-Ray: 120/80, BP stable.");
  std::vector<std::string> words;
  for (const auto& t : toks) words.push_back(t.text);
  CHECK(words == std::vector<std::string>{"chest", "x", "ray", "NUM", "NUM", "bp", "stable"});
}

TEST_CASE("normalize_text spans index the raw characters") {
  const std::string raw = "Acute MI, 2x";
  const auto toks = normalize_text(raw);
  REQUIRE(toks.size() == 4);
  CHECK(raw.substr(toks[0].span.begin, toks[0].span.end - toks[0].span.begin) == "Acute");
  CHECK(raw.substr(toks[1].span.begin, toks[1].span.end - toks[1].span.begin) == "MI");
  CHECK(raw.substr(toks[2].span.begin, toks[2].span.end - toks[2].span.begin) == "2");
  CHECK(raw.substr(toks[3].span.begin, toks[3].span.end - toks[3].span.begin) == "x");
}

TEST_CASE("normalize_text on empty and separator-only input") {
  CHECK(normalize_text("").empty());
  CHECK(normalize_text("  ---  !!").empty());
}

TEST_CASE("vocabulary keeps ids dense and ordered by frequency then token") {
  // "bb" x3, "aa" x3, "cc" x2, "dd" x1 with min_frequency 2.
  const std::vector<std::string> docs = {"bb aa cc", "aa bb cc", "aa bb dd"};
  const Vocabulary v = build_vocabulary(docs, 2);
  CHECK(v.size() == 5);  // PAD, UNK, aa, bb, cc
  CHECK(v.tokens[0] == "PAD");
  CHECK(v.tokens[1] == "UNK");
  CHECK(v.lookup("aa") == 2);  // tie at 3 -> "aa" before "bb"
  CHECK(v.lookup("bb") == 3);
  CHECK(v.lookup("cc") == 4);
  CHECK(v.lookup("dd") == Vocabulary::kUnkId);
  CHECK(v.lookup("never-seen") == Vocabulary::kUnkId);
}

TEST_CASE("vocabulary json round-trip") {
  const Vocabulary v = build_vocabulary({"alpha beta beta", "beta alpha gamma"}, 1);
  const Vocabulary w = Vocabulary::from_json(v.to_json());
  CHECK(w.tokens == v.tokens);
  CHECK(w.frequency == v.frequency);
  CHECK(w.min_frequency == v.min_frequency);
  CHECK(w.lookup("beta") == v.lookup("beta"));
}

TEST_CASE("tokenize aligns ids, spans, and surface words") {
  const Vocabulary v = build_vocabulary({"fever fever cough cough"}, 2);
  const TokenizedDocument d = tokenize("Fever, then cough 38", v);
  REQUIRE(d.ids.size() == 4);
  CHECK(d.words == std::vector<std::string>{"fever", "then", "cough", "NUM"});
  CHECK(d.ids[0] == v.lookup("fever"));
  CHECK(d.ids[1] == Vocabulary::kUnkId);
  CHECK(d.ids[2] == v.lookup("cough"));
  CHECK(d.spans.size() == d.ids.size());
}

namespace {

// Brute-force tf-idf oracle straight from the formula.
Vector oracle_tfidf(const std::vector<std::vector<std::string>>& train_docs,
                    const std::vector<std::string>& doc,
                    const std::vector<std::string>& terms) {
  const double N = static_cast<double>(train_docs.size());
  Vector out = Vector::Zero(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    double df = 0.0;
    for (const auto& d : train_docs)
      if (std::count(d.begin(), d.end(), terms[k]) > 0) df += 1.0;
    const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), terms[k]));
    out[static_cast<Eigen::Index>(k)] = tf * (std::log((1.0 + N) / (1.0 + df)) + 1.0);
  }
  const double n = out.norm();
  if (n > 0.0) out /= n;
  return out;
}

}  // namespace

TEST_CASE("tfidf matches brute-force oracle on random corpora") {
  Rng rng(5);
  const std::vector<std::string> lexicon = {"apnea", "edema", "fever", "rash",
                                            "pain",  "cough", "chill"};
  std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int D = 2 + static_cast<int>(rng() % 6);
    std::vector<std::vector<std::string>> docs(static_cast<std::size_t>(D));
    for (auto& d : docs) {
      const int len = 1 + static_cast<int>(rng() % 12);
      for (int t = 0; t < len; ++t) d.push_back(lexicon[pick(rng)]);
    }
    const std::vector<std::string> terms = {"apnea", "fever", "cough", "zzz"};
    TfidfModel model(terms);
    model.fit(docs);
    for (const auto& d : docs) {
      const Vector got = model.transform(d);
      const Vector want = oracle_tfidf(docs, d, terms);
      REQUIRE(got.size() == want.size());
      for (Eigen::Index k = 0; k < got.size(); ++k)
        CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("tfidf transform is unit length or zero") {
  TfidfModel model(std::vector<std::string>{"a", "b"});
  model.fit({{"a", "a", "b"}, {"b"}});
  CHECK(model.transform({"a", "b", "b"}).norm() == doctest::Approx(1.0));
  CHECK(model.transform({"c"}).norm() == 0.0);
}

TEST_CASE("tfidf json round-trip preserves transform") {
  TfidfModel model(std::vector<std::string>{"x", "y", "z"});
  model.fit({{"x", "y"}, {"y", "z", "z"}, {"x"}});
  const TfidfModel copy = TfidfModel::from_json(model.to_json());
  const Vector a = model.transform({"x", "z", "z"});
  const Vector b = copy.transform({"x", "z", "z"});
  CHECK((a - b).norm() == 0.0);
  CHECK(copy.terms() == model.terms());
}

TEST_CASE("tfidf rejects an empty term list") {
  CHECK_THROWS_AS(TfidfModel(std::vector<std::string>{}), ConfigError);
}

TEST_CASE("guideline keywords surface each code's distinctive terms") {
  const std::vector<std::string> guidelines = {
      "renal failure renal failure creatinine elevated",
      "cardiac failure ejection fraction reduced",
      ""};  // empty guideline contributes nothing
  const auto terms = extract_guideline_keywords(guidelines, 2);
  CHECK(std::count(terms.begin(), terms.end(), "renal") == 1);
  CHECK(std::count(terms.begin(), terms.end(), "cardiac") +
            std::count(terms.begin(), terms.end(), "ejection") >=
        1);
  // Unioned without duplicates.
  const std::set<std::string> uniq(terms.begin(), terms.end());
  CHECK(uniq.size() == terms.size());
  CHECK(terms.size() <= 4);
}

TEST_CASE("compute_tfidf agrees with TfidfModel fit on the same corpus") {
  const std::vector<std::vector<std::string>> docs = {{"a", "b"}, {"b", "c"}, {"a"}};
  const std::vector<std::string> terms = {"a", "b", "c"};
  const auto vectors = compute_tfidf(docs, terms);
  TfidfModel model(terms);
  model.fit(docs);
  REQUIRE(vectors.size() == docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i)
    CHECK((vectors[i] - model.transform(docs[i])).norm() == doctest::Approx(0.0));
}
