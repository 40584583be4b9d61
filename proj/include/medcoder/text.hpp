#pragma once

#include "medcoder/types.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace medcoder {

struct Span {
  int begin = 0;  // character offsets into the raw text, [begin, end)
  int end = 0;
};

// Normalized surface forms with their source spans. Digit runs collapse to
// the sentinel "NUM"; everything else is lowercased alphanumeric runs.
struct RawToken {
  std::string text;
  Span span;
};

std::vector<RawToken> normalize_text(const std::string& raw);

struct Vocabulary {
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  std::unordered_map<std::string, int> ids;
  std::vector<std::string> tokens;  // indexed by id; [0]="PAD", [1]="UNK"
  std::vector<long> frequency;      // training frequency per id (0 for PAD/UNK)
  int min_frequency = 10;

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnkId : it->second;
  }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// Tokens below min_frequency fall through to UNK. Ids are dense from 0 with
// PAD=0, UNK=1, then retained tokens by (frequency desc, token asc).
Vocabulary build_vocabulary(const std::vector<std::string>& training_documents,
                            int min_frequency);

struct TokenizedDocument {
  std::vector<int> ids;
  std::vector<Span> spans;
  std::vector<std::string> words;  // normalized surface forms, aligned with ids
};

TokenizedDocument tokenize(const std::string& raw_text, const Vocabulary& vocabulary);

// tf * (log((1+N)/(1+df)) + 1), L2-normalized; idf statistics from fit() only.
class TfidfModel {
 public:
  TfidfModel() = default;
  TfidfModel(std::vector<std::string> terms) : terms_(std::move(terms)) {
    if (terms_.empty()) throw ConfigError("TfidfModel: empty term list");
    for (std::size_t i = 0; i < terms_.size(); ++i)
      index_[terms_[i]] = static_cast<int>(i);
  }

  void fit(const std::vector<std::vector<std::string>>& documents);
  Vector transform(const std::vector<std::string>& document_tokens) const;

  const std::vector<std::string>& terms() const { return terms_; }
  const Vector& idf() const { return idf_; }
  int dim() const { return static_cast<int>(terms_.size()); }

  std::string to_json() const;
  static TfidfModel from_json(const std::string& text);

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, int> index_;
  Vector idf_;
};

std::vector<Vector> compute_tfidf(const std::vector<std::vector<std::string>>& documents,
                                  const std::vector<std::string>& term_list);

// Per code, the top-k guideline terms by tf-idf against the guideline corpus,
// unioned in catalog order into one global term list. Codes whose guideline
// text is empty contribute nothing.
std::vector<std::string> extract_guideline_keywords(
    const std::vector<std::string>& guideline_texts, int top_k_per_code);

}  // namespace medcoder
