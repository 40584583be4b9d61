#pragma once

#include "medcoder/tabular.hpp"
#include "medcoder/text.hpp"
#include "medcoder/textcnn.hpp"
#include "medcoder/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace medcoder {

// Per-word association with the target code's logit: the sum over all
// computation paths from the word's embedding entries, through convolution
// windows that survive max-pooling, to the code's output unit. Words no
// surviving window touches score zero. With zero biases and an identity
// output the scores of a document sum to the logit.
std::vector<double> word_influence(const TextModel& model,
                                   const std::vector<int>& token_ids,
                                   const Vector* tfidf, int target_code);

struct PhraseEvidence {
  std::string phrase;
  Span span;
  double score = 0.0;
  int rank = 0;
};

// Maximal runs of consecutive non-zero-score words; phrase score is the
// maximum word score in the run; ties rank the earlier phrase first.
std::vector<PhraseEvidence> assemble_phrases(const std::vector<double>& word_scores,
                                             const std::vector<Span>& source_spans,
                                             const std::vector<std::string>& words,
                                             int top_k);

struct FeatureEvidence {
  int feature_index = -1;
  std::string feature_id;
  std::string table;  // LAB | CHART | MED | BIO
  double weight = 0.0;
  int rank = 0;
};

struct SurrogateConfig {
  int sample_count = 1000;
  double kernel_sigma = 0.25;  // in normalized Hamming distance
  double ridge_lambda = 1.0;
  int top_k = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

using TabularPredictFn = std::function<double(const BinaryFeatureVector&)>;

// Local surrogate: perturb the instance by switching active bits off with
// probability 1/2, weight neighbors by exp(-(hamming/active)^2 / sigma^2),
// fit weighted ridge regression, rank features by |coefficient|.
std::vector<FeatureEvidence> explain_tabular(const TabularPredictFn& predict,
                                             const BinaryFeatureVector& instance,
                                             const FeatureSchema& schema,
                                             const SurrogateConfig& config);

// Exact set Jaccard over feature ids. Both-empty returns 1.
double jaccard_ids(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Greedy one-to-one matching of snippets whose token-overlap ratio reaches
// the threshold, then |matched| / (|A| + |B| - |matched|).
double jaccard_text(const std::vector<std::string>& a, const std::vector<std::string>& b,
                    double overlap_threshold);

// Overlap ratio used by jaccard_text: |shared tokens| / |smaller token set|.
double token_overlap_ratio(const std::string& a, const std::string& b);

}  // namespace medcoder
