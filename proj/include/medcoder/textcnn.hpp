#pragma once

#include "medcoder/checkpoint.hpp"
#include "medcoder/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace medcoder {

struct TextModelConfig {
  int vocab_size = 0;
  int num_codes = 0;
  int embedding_dim = 256;
  std::vector<int> kernel_widths = {2, 3, 4};
  int feature_maps = 128;
  double dropout_rate = 0.1;
  double l2_coefficient = 1e-4;
  double learning_rate = 1e-3;
  int batch_size = 32;
  double smoothing_alpha = 0.3;  // <= 0 turns label smoothing off
  bool tfidf_side_channel = false;
  int tfidf_dim = 0;
  int epochs = 10;
  int max_tokens = 2500;
  std::uint64_t seed = 0;

  int max_kernel_width() const;
  int pooled_dim() const {
    return feature_maps * static_cast<int>(kernel_widths.size());
  }
  void validate() const;
};

struct ConvLayer {
  int width = 0;
  Matrix weights;  // feature_maps x (width * embedding_dim)
  Vector bias;     // feature_maps
};

struct TextModel {
  TextModelConfig config;
  Matrix embedding;  // vocab_size x embedding_dim; PAD row pinned to zero
  std::vector<ConvLayer> convs;
  Matrix fc_weights;  // num_codes x (pooled_dim + tfidf_dim)
  Vector fc_bias;     // num_codes

  static TextModel init(const TextModelConfig& config, Rng& rng);

  void save(const std::string& path) const;
  static TextModel load(const std::string& path);
};

// Eq.-style label smoothing: (1-eps)*I + eps/C elementwise.
Matrix smooth_labels(const IntMatrix& labels, double epsilon, int num_codes);

// One Beta(alpha, alpha) draw.
double sample_epsilon(double alpha, Rng& rng);

// Mean binary cross-entropy over all N*C cells, probabilities clamped to
// [1e-7, 1-1e-7].
double ce_loss(const Matrix& probabilities, const Matrix& smoothed_labels);

struct ConvCache {
  Matrix preact;            // feature_maps x positions (pre-ReLU)
  std::vector<int> argmax;  // pooled position per filter
  Vector pooled;            // post-ReLU max per filter
};

struct TextForwardCache {
  std::vector<int> padded_ids;
  int real_length = 0;
  Matrix inputs;  // padded_len x embedding_dim
  std::vector<ConvCache> convs;
  Vector features;  // pooled (+ tfidf block), pre-dropout
  Vector dropout_mask;
  Vector logits;
  Vector probabilities;
};

// Embedding -> per-width conv + ReLU -> max-pool over real-token windows ->
// concat (+ tfidf block) -> dropout (training only) -> fully connected ->
// sigmoid. Windows past the last real token are excluded so trailing PAD never
// changes the output.
Vector text_forward(const TextModel& model, const std::vector<int>& token_ids,
                    const Vector* tfidf, bool training = false, Rng* rng = nullptr,
                    TextForwardCache* cache = nullptr);

struct TextGradients {
  Matrix embedding;
  std::vector<ConvLayer> convs;
  Matrix fc_weights;
  Vector fc_bias;

  static TextGradients zeros(const TextModel& model);
  void add_l2(const TextModel& model, double l2);
};

// Accumulates d(loss)/d(params) given d(loss)/d(logits) for one document.
void text_backward(const TextModel& model, const TextForwardCache& cache,
                   const Vector& dlogits, TextGradients& grads);

struct TextTrainExample {
  std::vector<int> token_ids;
  Vector tfidf;  // empty unless side channel enabled
  IntVector labels;
};

struct TextEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_micro_f1 = 0.0;
  double mean_epsilon = 0.0;
};

struct TextTrainResult {
  TextModel model;  // best validation checkpoint
  std::vector<TextEpochLog> log;
};

TextTrainResult train_text(const TextModelConfig& config,
                           const std::vector<TextTrainExample>& training_set,
                           const std::vector<TextTrainExample>& validation_set);

Matrix predict_text(const TextModel& model, const std::vector<TextTrainExample>& examples);

}  // namespace medcoder
