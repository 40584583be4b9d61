#include "medcoder/ensemble.hpp"

#include "medcoder/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

namespace medcoder {

using json = nlohmann::ordered_json;

void EnsembleWeights::validate() const {
  if (predictor_ids.empty() ||
      alphas.size() != static_cast<Eigen::Index>(predictor_ids.size()))
    throw ConfigError("EnsembleWeights: predictor/weight count mismatch");
  if (fallback_index < 0 || fallback_index >= alphas.size())
    throw ConfigError("EnsembleWeights: fallback index out of range");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < alphas.size(); ++k) {
    if (alphas[k] < 0.0) throw ConfigError("EnsembleWeights: negative weight");
    sum += alphas[k];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("EnsembleWeights: weights must sum to 1");
}

std::string EnsembleWeights::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "ensemble_weights";
  json preds = json::array();
  for (std::size_t k = 0; k < predictor_ids.size(); ++k)
    preds.push_back({{"predictor_id", predictor_ids[k]},
                     {"alpha", alphas[static_cast<Eigen::Index>(k)]},
                     {"fallback", static_cast<int>(k) == fallback_index}});
  j["predictors"] = std::move(preds);
  return j.dump(2);
}

EnsembleWeights EnsembleWeights::from_json(const std::string& text) {
  const json j = json::parse(text);
  EnsembleWeights w;
  const auto& preds = j.at("predictors");
  w.alphas = Vector(static_cast<Eigen::Index>(preds.size()));
  int k = 0;
  for (const auto& p : preds) {
    w.predictor_ids.push_back(p.at("predictor_id").get<std::string>());
    w.alphas[k] = p.at("alpha").get<double>();
    if (p.at("fallback").get<bool>()) w.fallback_index = k;
    ++k;
  }
  w.validate();
  return w;
}

EnsembleWeights EnsembleWeights::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("EnsembleWeights::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void EnsembleWeights::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("EnsembleWeights::save: cannot open " + path);
  f << to_json();
}

Vector fuse(const std::vector<ModalityPrediction>& predictions,
            const EnsembleWeights& weights) {
  weights.validate();
  if (predictions.size() != weights.predictor_ids.size())
    throw DataError("fuse: prediction count does not match registered predictors");
  if (!predictions[static_cast<std::size_t>(weights.fallback_index)].available)
    throw DataError("fuse: fallback predictor unavailable");

  Vector effective = weights.alphas;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    if (!predictions[k].available) {
      effective[weights.fallback_index] += effective[static_cast<Eigen::Index>(k)];
      effective[static_cast<Eigen::Index>(k)] = 0.0;
    }
  }

  Eigen::Index C = -1;
  for (const auto& p : predictions)
    if (p.available) {
      if (C >= 0 && p.probabilities.size() != C)
        throw DataError("fuse: predictors disagree on code count");
      C = p.probabilities.size();
    }
  Vector fused = Vector::Zero(C);
  for (std::size_t k = 0; k < predictions.size(); ++k)
    if (predictions[k].available)
      fused += effective[static_cast<Eigen::Index>(k)] * predictions[k].probabilities;
  return fused;
}

std::vector<Vector> enumerate_simplex_grid(int dimensions, double step) {
  const int steps = static_cast<int>(std::lround(1.0 / step));
  if (steps < 1 || std::abs(steps * step - 1.0) > 1e-9)
    throw ConfigError("enumerate_simplex_grid: step must divide 1");
  std::vector<Vector> out;
  std::vector<int> counts(static_cast<std::size_t>(dimensions), 0);
  // Lexicographic enumeration of compositions of `steps` into K parts.
  std::function<void(int, int)> rec = [&](int dim, int remaining) {
    if (dim == dimensions - 1) {
      counts[static_cast<std::size_t>(dim)] = remaining;
      Vector v(dimensions);
      for (int k = 0; k < dimensions; ++k)
        v[k] = static_cast<double>(counts[static_cast<std::size_t>(k)]) /
               static_cast<double>(steps);
      out.push_back(std::move(v));
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[static_cast<std::size_t>(dim)] = c;
      rec(dim + 1, remaining - c);
    }
  };
  rec(0, steps);
  return out;
}

namespace {

double micro_f1_at_half(const std::vector<std::vector<ModalityPrediction>>& preds,
                        const IntMatrix& labels, const EnsembleWeights& w) {
  const Eigen::Index N = labels.rows(), C = labels.cols();
  IntMatrix decisions(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Vector fused = fuse(preds[static_cast<std::size_t>(i)], w);
    for (Eigen::Index j = 0; j < C; ++j) decisions(i, j) = fused[j] >= 0.5 ? 1 : 0;
  }
  return f1_scores(decisions, labels).micro;
}

}  // namespace

EnsembleWeights tune_weights(
    const std::vector<std::vector<ModalityPrediction>>& validation_predictions,
    const IntMatrix& validation_labels, const std::vector<std::string>& predictor_ids,
    int fallback_index, double grid_step) {
  if (validation_predictions.empty()) throw DataError("tune_weights: empty validation set");
  if (static_cast<Eigen::Index>(validation_predictions.size()) != validation_labels.rows())
    throw DataError("tune_weights: prediction/label row mismatch");
  const int K = static_cast<int>(predictor_ids.size());
  if (K < 1) throw ConfigError("tune_weights: no predictors");

  EnsembleWeights best;
  best.predictor_ids = predictor_ids;
  best.fallback_index = fallback_index;
  if (K == 1) {
    best.alphas = Vector::Ones(1);
    return best;
  }

  double best_score = -1.0;
  for (const Vector& alphas : enumerate_simplex_grid(K, grid_step)) {
    EnsembleWeights cand;
    cand.predictor_ids = predictor_ids;
    cand.fallback_index = fallback_index;
    cand.alphas = alphas;
    const double score = micro_f1_at_half(validation_predictions, validation_labels, cand);
    bool take = score > best_score + 1e-12;
    if (!take && std::abs(score - best_score) <= 1e-12 && best.alphas.size() == K) {
      const double cand_fb = alphas[fallback_index];
      const double best_fb = best.alphas[fallback_index];
      if (cand_fb > best_fb + 1e-12) {
        take = true;
      } else if (std::abs(cand_fb - best_fb) <= 1e-12) {
        for (int k = 0; k < K; ++k) {
          if (alphas[k] != best.alphas[k]) {
            take = alphas[k] < best.alphas[k];
            break;
          }
        }
      }
    }
    if (take) {
      best_score = score;
      best.alphas = alphas;
    }
  }
  return best;
}

IntVector decide(const Vector& fused_probabilities, const Vector& thresholds) {
  if (fused_probabilities.size() != thresholds.size())
    throw DataError("decide: threshold length mismatch");
  IntVector out(fused_probabilities.size());
  for (Eigen::Index j = 0; j < out.size(); ++j)
    out[j] = fused_probabilities[j] >= thresholds[j] ? 1 : 0;
  return out;
}

Vector tune_thresholds(const Matrix& validation_probabilities,
                       const IntMatrix& validation_labels) {
  const Eigen::Index N = validation_probabilities.rows(), C = validation_probabilities.cols();
  if (N != validation_labels.rows() || C != validation_labels.cols())
    throw DataError("tune_thresholds: shape mismatch");
  Vector thresholds = Vector::Constant(C, 0.5);

  IntMatrix decisions(N, C);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < C; ++j)
      decisions(i, j) = validation_probabilities(i, j) >= thresholds[j] ? 1 : 0;
  double current = f1_scores(decisions, validation_labels).micro;

  // Coordinate ascent from the 0.5 baseline; a move is kept only when it
  // improves micro-F1, so the result can never fall below the baseline.
  for (Eigen::Index j = 0; j < C; ++j) {
    std::vector<double> values;
    for (Eigen::Index i = 0; i < N; ++i) values.push_back(validation_probabilities(i, j));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> candidates = {0.5};
    for (std::size_t v = 0; v + 1 < values.size(); ++v)
      candidates.push_back(0.5 * (values[v] + values[v + 1]));
    for (double cand : candidates) {
      if (cand <= 0.0 || cand >= 1.0) continue;
      for (Eigen::Index i = 0; i < N; ++i)
        decisions(i, j) = validation_probabilities(i, j) >= cand ? 1 : 0;
      const double score = f1_scores(decisions, validation_labels).micro;
      if (score > current + 1e-12) {
        current = score;
        thresholds[j] = cand;
      }
    }
    // Restore the accepted threshold's decisions for subsequent coordinates.
    for (Eigen::Index i = 0; i < N; ++i)
      decisions(i, j) = validation_probabilities(i, j) >= thresholds[j] ? 1 : 0;
  }
  return thresholds;
}

}  // namespace medcoder
