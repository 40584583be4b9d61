#pragma once

#include "medcoder/corpus.hpp"
#include "medcoder/text.hpp"
#include "medcoder/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace medcoder {

struct RankerConfig {
  int char_embedding_dim = 50;
  std::vector<int> char_kernel_widths = {2, 3, 4};
  int char_filters = 25;  // per width
  int word_embedding_dim = 50;
  int hidden_units = 100;  // one BiLSTM layer, per direction
  double margin = 1.0;
  int ngram_min = 2;
  int ngram_max = 5;
  int negatives_per_anchor = 5;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 50;
  std::uint64_t seed = 0;

  int char_feature_dim() const {
    return char_filters * static_cast<int>(char_kernel_widths.size());
  }
  int token_input_dim() const { return word_embedding_dim + char_feature_dim(); }
  int output_dim() const { return 2 * hidden_units; }
  void validate() const;
};

// Fixed character inventory: PAD, UNK, a-z, 0-9.
int char_vocab_size();
int char_id(char c);

struct LstmParams {
  Matrix wx;  // 4H x input_dim, gate order i,f,g,o
  Matrix wh;  // 4H x H
  Vector b;   // 4H
};

struct CharConvLayer {
  int width = 0;
  Matrix weights;  // filters x (width * char_embedding_dim)
  Vector bias;
};

struct RankerModel {
  RankerConfig config;
  Vocabulary word_vocab;
  Matrix char_embedding;  // char_vocab x char_embedding_dim
  std::vector<CharConvLayer> char_convs;
  Matrix word_embedding;  // |V| x word_embedding_dim
  LstmParams forward_lstm;
  LstmParams backward_lstm;

  void save(const std::string& path) const;
  static RankerModel load(const std::string& path);
};

RankerModel init_ranker(const RankerConfig& config, const Vocabulary& word_vocab, Rng& rng);

// Word embedding + char-CNN per token -> one BiLSTM layer -> max-pool over
// time. Output dimension is 2 * hidden_units regardless of phrase length.
Vector encode(const RankerModel& model, const std::string& phrase);

// Char-CNN feature block alone, for form-similarity probes.
Vector char_features(const RankerModel& model, const std::string& token);

// Mean over triplets of max(d(a,p) - d(a,n) + margin, 0), Euclidean d.
double triplet_loss(const std::vector<Vector>& anchors, const std::vector<Vector>& positives,
                    const std::vector<Vector>& negatives, double margin);

struct SynonymCorpus {
  struct Entry {
    std::string code;
    std::string description;
    std::vector<std::string> positives;  // description + synonyms
    std::vector<std::string> negatives;  // mined hard negatives
  };
  std::vector<Entry> entries;

  std::string to_json() const;
  static SynonymCorpus from_json(const std::string& text);
  static SynonymCorpus load(const std::string& path);
  void save(const std::string& path) const;
};

long levenshtein(const std::string& a, const std::string& b);

// Per code description, the k closest candidate n-grams by edit distance that
// are not positives of that code; ties break lexicographically. Candidates are
// token n-grams (config length range) drawn from the other codes' strings and
// the supplied free-text corpus.
SynonymCorpus mine_negatives(const CodeCatalog& catalog,
                             const std::vector<std::string>& text_corpus,
                             const RankerConfig& config);

// Distances to each code description, min-max normalized per phrase, inverted
// to scores and averaged over phrases. All-equal distances map to 0.5.
Vector rank_codes(const RankerModel& model, const std::vector<std::string>& diagnosis_phrases,
                  const CodeCatalog& catalog);

struct RankerTrainResult {
  RankerModel model;  // best validation checkpoint
  std::vector<double> epoch_loss;
  double best_validation_accuracy = 0.0;
};

// validation: (held-out synonym phrase, catalog code index); accuracy is the
// fraction ranked top-1 against the code descriptions.
RankerTrainResult train_ranker(const RankerConfig& config, const SynonymCorpus& corpus,
                               const std::vector<std::pair<std::string, int>>& validation);

}  // namespace medcoder
