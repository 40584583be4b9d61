#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medcoder/ensemble.hpp"
#include "medcoder/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace medcoder;

namespace {

ModalityPrediction pred(const std::string& id, const Vector& p, bool available = true) {
  ModalityPrediction m;
  m.predictor_id = id;
  m.available = available;
  if (available) m.probabilities = p;
  return m;
}

EnsembleWeights weights3(double a, double b, double c) {
  EnsembleWeights w;
  w.predictor_ids = {"text", "ranker", "tabular"};
  w.alphas = Vector(3);
  w.alphas << a, b, c;
  w.fallback_index = 0;
  return w;
}

}  // namespace

TEST_CASE("fuse matches the weighted-sum formula on random instances") {
  Rng rng(2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 120; ++trial) {
    const int C = 1 + static_cast<int>(rng() % 9);
    Vector pa(C), pb(C), pc(C);
    for (int j = 0; j < C; ++j) {
      pa[j] = unif(rng);
      pb[j] = unif(rng);
      pc[j] = unif(rng);
    }
    double a = unif(rng), b = unif(rng), c = unif(rng);
    const double s = a + b + c;
    a /= s;
    b /= s;
    c /= s;
    const Vector fused =
        fuse({pred("text", pa), pred("ranker", pb), pred("tabular", pc)},
             weights3(a, b, c));
    for (int j = 0; j < C; ++j)
      CHECK(fused[j] ==
            doctest::Approx(a * pa[j] + b * pb[j] + c * pc[j]).epsilon(1e-12));
  }
}

TEST_CASE("missing modality weight is reallocated to the fallback") {
  Vector pa(2), pc(2);
  pa << 0.9, 0.1;
  pc << 0.2, 0.8;
  const Vector fused = fuse(
      {pred("text", pa), pred("ranker", Vector(), false), pred("tabular", pc)},
      weights3(0.5, 0.3, 0.2));
  // ranker's 0.3 flows to text: 0.8 * pa + 0.2 * pc.
  CHECK(fused[0] == doctest::Approx(0.8 * 0.9 + 0.2 * 0.2).epsilon(1e-12));
  CHECK(fused[1] == doctest::Approx(0.8 * 0.1 + 0.2 * 0.8).epsilon(1e-12));
}

TEST_CASE("fuse refuses an unavailable fallback") {
  Vector p(2);
  p << 0.5, 0.5;
  CHECK_THROWS_AS(
      fuse({pred("text", Vector(), false), pred("ranker", p), pred("tabular", p)},
           weights3(0.4, 0.3, 0.3)),
      DataError);
}

TEST_CASE("weights validation enforces the simplex") {
  EnsembleWeights w = weights3(0.5, 0.3, 0.3);  // sums to 1.1
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = weights3(0.5, 0.6, -0.1);
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = weights3(0.5, 0.3, 0.2);
  CHECK_NOTHROW(w.validate());
}

TEST_CASE("weights json round-trip") {
  const EnsembleWeights w = weights3(0.6, 0.25, 0.15);
  const EnsembleWeights v = EnsembleWeights::from_json(w.to_json());
  CHECK(v.predictor_ids == w.predictor_ids);
  CHECK((v.alphas - w.alphas).norm() == 0.0);
  CHECK(v.fallback_index == w.fallback_index);
}

TEST_CASE("simplex grid enumerates all compositions exactly once") {
  for (int K : {1, 2, 3, 4}) {
    for (double step : {0.5, 0.25, 0.2}) {
      const auto grid = enumerate_simplex_grid(K, step);
      const int steps = static_cast<int>(std::lround(1.0 / step));
      // C(steps + K - 1, K - 1) compositions.
      long expect = 1;
      for (int i = 1; i <= K - 1; ++i)
        expect = expect * (steps + i) / i;
      CHECK(static_cast<long>(grid.size()) == expect);
      for (const auto& v : grid) {
        CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(v.minCoeff() >= 0.0);
      }
      // No duplicates.
      for (std::size_t i = 0; i < grid.size(); ++i)
        for (std::size_t j = i + 1; j < grid.size(); ++j)
          CHECK((grid[i] - grid[j]).cwiseAbs().maxCoeff() > 1e-12);
    }
  }
  CHECK_THROWS_AS(enumerate_simplex_grid(2, 0.3), ConfigError);
}

TEST_CASE("tune_weights puts all weight on a perfect modality") {
  Rng rng(8);
  std::bernoulli_distribution coin(0.4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int N = 40, C = 3;
  IntMatrix labels(N, C);
  std::vector<std::vector<ModalityPrediction>> preds;
  for (int i = 0; i < N; ++i) {
    Vector oracle(C), noise(C);
    for (int j = 0; j < C; ++j) {
      labels(i, j) = coin(rng) ? 1 : 0;
      oracle[j] = labels(i, j) == 1 ? 0.95 : 0.05;
      noise[j] = unif(rng);
    }
    preds.push_back({pred("good", oracle), pred("noisy", noise)});
  }
  const EnsembleWeights w = tune_weights(preds, labels, {"good", "noisy"}, 0, 0.25);
  CHECK(w.alphas[0] >= 0.75);
}

TEST_CASE("tune_weights tie-break prefers the larger fallback weight") {
  // Two identical predictors: every grid point scores the same, so the
  // winner must be all weight on the fallback.
  Vector p(2);
  p << 0.9, 0.1;
  IntMatrix labels(3, 2);
  labels << 1, 0, 1, 0, 1, 0;
  std::vector<std::vector<ModalityPrediction>> preds(
      3, {pred("a", p), pred("b", p)});
  const EnsembleWeights w = tune_weights(preds, labels, {"a", "b"}, 0, 0.25);
  CHECK(w.alphas[0] == doctest::Approx(1.0));
}

TEST_CASE("decide applies per-code thresholds") {
  Vector p(3), t(3);
  p << 0.4, 0.6, 0.5;
  t << 0.5, 0.5, 0.5;
  const IntVector d = decide(p, t);
  CHECK(d[0] == 0);
  CHECK(d[1] == 1);
  CHECK(d[2] == 1);  // >= threshold decides positive
  Vector bad(2);
  CHECK_THROWS_AS(decide(p, bad), DataError);
}

TEST_CASE("tuned thresholds never score below the 0.5 baseline") {
  Rng rng(19);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 30; ++trial) {
    const int N = 25, C = 4;
    Matrix probs(N, C);
    IntMatrix labels(N, C);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        probs(i, j) = unif(rng);
        labels(i, j) = coin(rng) ? 1 : 0;
      }
    const Vector t = tune_thresholds(probs, labels);
    IntMatrix base(N, C), tuned(N, C);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        base(i, j) = probs(i, j) >= 0.5 ? 1 : 0;
        tuned(i, j) = probs(i, j) >= t[j] ? 1 : 0;
      }
    CHECK(f1_scores(tuned, labels).micro >= f1_scores(base, labels).micro);
  }
}

TEST_CASE("threshold tuning exploits an informative low-probability code") {
  // All positives of the single code sit at 0.3, negatives at 0.1; the 0.5
  // baseline predicts nothing, a tuned threshold separates them perfectly.
  const int N = 10;
  Matrix probs(N, 1);
  IntMatrix labels(N, 1);
  for (int i = 0; i < N; ++i) {
    labels(i, 0) = i < 4 ? 1 : 0;
    probs(i, 0) = i < 4 ? 0.3 : 0.1;
  }
  const Vector t = tune_thresholds(probs, labels);
  CHECK(t[0] > 0.1);
  CHECK(t[0] <= 0.3);
}
