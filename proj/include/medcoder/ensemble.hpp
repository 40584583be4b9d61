#pragma once

#include "medcoder/types.hpp"

#include <string>
#include <vector>

namespace medcoder {

struct EnsembleWeights {
  std::vector<std::string> predictor_ids;
  Vector alphas;           // simplex over predictors
  int fallback_index = 0;  // the text model; receives missing predictors' mass

  void validate() const;
  std::string to_json() const;
  static EnsembleWeights from_json(const std::string& text);
  static EnsembleWeights load(const std::string& path);
  void save(const std::string& path) const;
};

struct ModalityPrediction {
  std::string predictor_id;
  Vector probabilities;  // length C when available
  bool available = true;
};

// Weighted sum of the available predictors' probabilities; each missing
// predictor's weight moves to the fallback. Fails if the fallback is missing.
Vector fuse(const std::vector<ModalityPrediction>& predictions,
            const EnsembleWeights& weights);

// Exhaustive grid over the K-simplex at the given step; returns the weights
// maximizing validation micro-F1 at threshold 0.5. Ties prefer larger
// fallback weight, then lexicographically smaller weight vectors.
EnsembleWeights tune_weights(
    const std::vector<std::vector<ModalityPrediction>>& validation_predictions,
    const IntMatrix& validation_labels, const std::vector<std::string>& predictor_ids,
    int fallback_index, double grid_step = 0.05);

// All simplex points with coordinates that are multiples of step.
std::vector<Vector> enumerate_simplex_grid(int dimensions, double step);

IntVector decide(const Vector& fused_probabilities, const Vector& thresholds);

// Per-code thresholds chosen on validation data; each code's threshold
// maximizes that code's validation F1 (micro-F1 can only improve or tie
// versus a global 0.5).
Vector tune_thresholds(const Matrix& validation_probabilities,
                       const IntMatrix& validation_labels);

}  // namespace medcoder
