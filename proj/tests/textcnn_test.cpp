#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medcoder/textcnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace medcoder;

namespace {

TextModelConfig toy_config() {
  TextModelConfig c;
  c.vocab_size = 20;
  c.num_codes = 3;
  c.embedding_dim = 8;
  c.kernel_widths = {3};
  c.feature_maps = 4;
  c.dropout_rate = 0.0;
  c.l2_coefficient = 0.0;
  c.smoothing_alpha = 0.0;
  c.tfidf_side_channel = false;
  c.seed = 17;
  return c;
}

std::vector<int> random_ids(Rng& rng, int len, int vocab) {
  std::vector<int> ids;
  std::uniform_int_distribution<int> pick(1, vocab - 1);
  for (int t = 0; t < len; ++t) ids.push_back(pick(rng));
  return ids;
}

}  // namespace

TEST_CASE("smooth_labels matches the elementwise formula") {
  Rng rng(3);
  std::bernoulli_distribution coin(0.4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + static_cast<int>(rng() % 6);
    const int C = 1 + static_cast<int>(rng() % 7);
    IntMatrix labels(N, C);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) labels(i, j) = coin(rng) ? 1 : 0;
    const double eps = unif(rng);
    const Matrix s = smooth_labels(labels, eps, C);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        const double want = (1.0 - eps) * labels(i, j) + eps / C;
        CHECK(s(i, j) == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("sample_epsilon draws a Beta variate in [0,1] with mean near 1/2") {
  Rng rng(8);
  double sum = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double e = sample_epsilon(0.3, rng);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    sum += e;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.05));
  CHECK_THROWS_AS(sample_epsilon(0.0, rng), ConfigError);
}

TEST_CASE("ce_loss matches a scalar-loop oracle with clamping") {
  Rng rng(12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + static_cast<int>(rng() % 5);
    const int C = 1 + static_cast<int>(rng() % 6);
    Matrix p(N, C), y(N, C);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        // Include exact 0 and 1 sometimes so the clamp is exercised.
        const double u = unif(rng);
        p(i, j) = u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : u);
        y(i, j) = unif(rng);
      }
    double want = 0.0;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        const double q = std::min(1.0 - 1e-7, std::max(1e-7, p(i, j)));
        want += y(i, j) * std::log(q) + (1.0 - y(i, j)) * std::log(1.0 - q);
      }
    want = -want / (N * C);
    CHECK(ce_loss(p, y) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("trailing padding never changes the forward output") {
  Rng rng(21);
  const TextModelConfig cfg = toy_config();
  Rng init(5);
  const TextModel model = TextModel::init(cfg, init);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ids = random_ids(rng, 1 + static_cast<int>(rng() % 12), cfg.vocab_size);
    auto padded = ids;
    for (int k = 0; k < 7; ++k) padded.push_back(0);
    const Vector a = text_forward(model, ids, nullptr);
    const Vector b = text_forward(model, padded, nullptr);
    CHECK((a - b).norm() == 0.0);
  }
}

TEST_CASE("PAD embedding row is pinned to zero at init") {
  Rng rng(2);
  const TextModel model = TextModel::init(toy_config(), rng);
  CHECK(model.embedding.row(0).norm() == 0.0);
}

TEST_CASE("forward is deterministic outside training mode") {
  Rng rng(33);
  const TextModel model = TextModel::init(toy_config(), rng);
  const std::vector<int> ids = {3, 9, 1, 14, 2};
  const Vector a = text_forward(model, ids, nullptr);
  const Vector b = text_forward(model, ids, nullptr);
  CHECK((a - b).norm() == 0.0);
  CHECK((a.array() > 0.0).all());
  CHECK((a.array() < 1.0).all());
}

namespace {

// Loss of the toy model on one example: CE against hard labels, no dropout.
double toy_loss(const TextModel& model, const std::vector<int>& ids, const Vector* tfidf,
                const IntVector& labels) {
  const Vector p = text_forward(model, ids, tfidf);
  Matrix probs(1, p.size()), y(1, p.size());
  probs.row(0) = p.transpose();
  for (Eigen::Index j = 0; j < p.size(); ++j) y(0, j) = labels[j];
  return ce_loss(probs, y);
}

void check_grad(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  CHECK(std::abs(analytic - numeric) / denom < 1e-3);
}

}  // namespace

TEST_CASE("analytic gradients match finite differences on the toy model") {
  const TextModelConfig cfg = toy_config();
  Rng rng(99);
  TextModel model = TextModel::init(cfg, rng);
  const std::vector<int> ids = {4, 7, 2, 11, 5, 3};
  IntVector labels(3);
  labels << 1, 0, 1;

  TextForwardCache cache;
  const Vector p = text_forward(model, ids, nullptr, false, nullptr, &cache);
  Vector dlogits(3);
  for (int j = 0; j < 3; ++j)
    dlogits[j] = (p[j] - labels[j]) / 3.0;  // dCE/dlogit for one example
  TextGradients grads = TextGradients::zeros(model);
  text_backward(model, cache, dlogits, grads);

  const double h = 1e-4;
  auto fd = [&](double* param) {
    const double saved = *param;
    *param = saved + h;
    const double up = toy_loss(model, ids, nullptr, labels);
    *param = saved - h;
    const double dn = toy_loss(model, ids, nullptr, labels);
    *param = saved;
    return (up - dn) / (2.0 * h);
  };

  // Spot-check every parameter family, several entries each.
  for (int k = 0; k < 12; ++k) {
    const int r = 1 + static_cast<int>(rng() % (cfg.vocab_size - 1));
    const int c = static_cast<int>(rng() % cfg.embedding_dim);
    check_grad(grads.embedding(r, c), fd(&model.embedding(r, c)));
  }
  for (int k = 0; k < 12; ++k) {
    const int f = static_cast<int>(rng() % cfg.feature_maps);
    const int c = static_cast<int>(rng() % (3 * cfg.embedding_dim));
    check_grad(grads.convs[0].weights(f, c), fd(&model.convs[0].weights(f, c)));
  }
  for (int f = 0; f < cfg.feature_maps; ++f)
    check_grad(grads.convs[0].bias[f], fd(&model.convs[0].bias[f]));
  for (int j = 0; j < cfg.num_codes; ++j) {
    for (int k = 0; k < 4; ++k) {
      const int f = static_cast<int>(rng() % cfg.feature_maps);
      check_grad(grads.fc_weights(j, f), fd(&model.fc_weights(j, f)));
    }
    check_grad(grads.fc_bias[j], fd(&model.fc_bias[j]));
  }
}

TEST_CASE("gradients flow into the tfidf side channel too") {
  TextModelConfig cfg = toy_config();
  cfg.tfidf_side_channel = true;
  cfg.tfidf_dim = 5;
  Rng rng(41);
  TextModel model = TextModel::init(cfg, rng);
  const std::vector<int> ids = {2, 6, 9};
  Vector tfidf(5);
  tfidf << 0.2, 0.0, 0.7, 0.1, 0.5;
  IntVector labels(3);
  labels << 0, 1, 0;

  TextForwardCache cache;
  const Vector p = text_forward(model, ids, &tfidf, false, nullptr, &cache);
  Vector dlogits(3);
  for (int j = 0; j < 3; ++j) dlogits[j] = (p[j] - labels[j]) / 3.0;
  TextGradients grads = TextGradients::zeros(model);
  text_backward(model, cache, dlogits, grads);

  const double h = 1e-4;
  const int col = cfg.pooled_dim() + 2;  // a tfidf-block column
  double* param = &model.fc_weights(1, col);
  const double saved = *param;
  *param = saved + h;
  const double up = toy_loss(model, ids, &tfidf, labels);
  *param = saved - h;
  const double dn = toy_loss(model, ids, &tfidf, labels);
  *param = saved;
  check_grad(grads.fc_weights(1, col), (up - dn) / (2.0 * h));
}

TEST_CASE("model checkpoint round-trips through disk") {
  Rng rng(7);
  TextModelConfig cfg = toy_config();
  cfg.tfidf_side_channel = true;
  cfg.tfidf_dim = 4;
  const TextModel model = TextModel::init(cfg, rng);
  const auto path =
      (std::filesystem::temp_directory_path() / "medcoder_textcnn_ckpt.bin").string();
  model.save(path);
  const TextModel loaded = TextModel::load(path);
  CHECK(loaded.config.vocab_size == cfg.vocab_size);
  CHECK(loaded.config.tfidf_dim == 4);
  CHECK(loaded.config.kernel_widths == cfg.kernel_widths);
  // Tensors are stored as float32, so round-trips are exact only to that width.
  CHECK((loaded.embedding - model.embedding).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((loaded.fc_weights - model.fc_weights).cwiseAbs().maxCoeff() < 1e-6);
  const std::vector<int> ids = {3, 5, 8, 1};
  Vector tfidf = Vector::Zero(4);
  tfidf[1] = 0.9;
  CHECK((text_forward(model, ids, &tfidf) - text_forward(loaded, ids, &tfidf))
            .cwiseAbs()
            .maxCoeff() < 1e-5);
}

TEST_CASE("training reduces loss and separates two obvious classes") {
  TextModelConfig cfg = toy_config();
  cfg.num_codes = 2;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.smoothing_alpha = 0.0;

  Rng rng(55);
  std::vector<TextTrainExample> train, val;
  for (int i = 0; i < 60; ++i) {
    TextTrainExample ex;
    const bool pos = i % 2 == 0;
    // Token 5 marks class 0, token 11 marks class 1; the rest is noise.
    ex.token_ids = random_ids(rng, 10, 20);
    ex.token_ids[3] = pos ? 5 : 11;
    ex.labels = IntVector(2);
    ex.labels << (pos ? 1 : 0), (pos ? 0 : 1);
    (i < 48 ? train : val).push_back(std::move(ex));
  }
  const TextTrainResult result = train_text(cfg, train, val);
  REQUIRE(result.log.size() == 60);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
  const double best = std::max_element(result.log.begin(), result.log.end(),
                                       [](const auto& a, const auto& b) {
                                         return a.validation_micro_f1 <
                                                b.validation_micro_f1;
                                       })
                          ->validation_micro_f1;
  CHECK(best > 0.9);
  // The returned model is the best-validation checkpoint.
  Matrix preds = predict_text(result.model, val);
  IntMatrix dec(preds.rows(), preds.cols()), lab(preds.rows(), preds.cols());
  for (Eigen::Index i = 0; i < preds.rows(); ++i)
    for (Eigen::Index j = 0; j < preds.cols(); ++j) {
      dec(i, j) = preds(i, j) >= 0.5 ? 1 : 0;
      lab(i, j) = val[static_cast<std::size_t>(i)].labels[j];
    }
  long correct = 0;
  for (Eigen::Index i = 0; i < dec.rows(); ++i)
    for (Eigen::Index j = 0; j < dec.cols(); ++j)
      if (dec(i, j) == lab(i, j)) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(dec.size()) > 0.9);
}

TEST_CASE("training with a fixed seed is bit-reproducible") {
  TextModelConfig cfg = toy_config();
  cfg.num_codes = 2;
  cfg.epochs = 3;
  cfg.smoothing_alpha = 0.3;
  cfg.dropout_rate = 0.2;
  Rng rng(70);
  std::vector<TextTrainExample> train;
  for (int i = 0; i < 20; ++i) {
    TextTrainExample ex;
    ex.token_ids = random_ids(rng, 8, 20);
    ex.labels = IntVector(2);
    ex.labels << i % 2, 1 - i % 2;
    train.push_back(std::move(ex));
  }
  const std::vector<TextTrainExample> val(train.begin(), train.begin() + 5);
  const TextTrainResult a = train_text(cfg, train, val);
  const TextTrainResult b = train_text(cfg, train, val);
  CHECK((a.model.embedding - b.model.embedding).norm() == 0.0);
  CHECK((a.model.fc_weights - b.model.fc_weights).norm() == 0.0);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].mean_epsilon == b.log[e].mean_epsilon);
  }
}

TEST_CASE("config validation rejects nonsense") {
  TextModelConfig cfg = toy_config();
  cfg.embedding_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.kernel_widths = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.dropout_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.tfidf_side_channel = true;
  cfg.tfidf_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
