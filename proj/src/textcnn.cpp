#include "medcoder/textcnn.hpp"

#include "medcoder/adam.hpp"
#include "medcoder/metrics.hpp"
#include "medcoder/text.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace medcoder {

namespace {

constexpr double kProbClamp = 1e-7;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int TextModelConfig::max_kernel_width() const {
  int w = 1;
  for (int k : kernel_widths) w = std::max(w, k);
  return w;
}

void TextModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("TextModelConfig: vocab_size must include PAD/UNK");
  if (num_codes < 1) throw ConfigError("TextModelConfig: num_codes must be >= 1");
  if (embedding_dim < 1 || feature_maps < 1)
    throw ConfigError("TextModelConfig: dims must be positive");
  if (kernel_widths.empty()) throw ConfigError("TextModelConfig: no kernel widths");
  for (int w : kernel_widths)
    if (w < 1) throw ConfigError("TextModelConfig: kernel width must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("TextModelConfig: dropout_rate must be in [0,1)");
  if (learning_rate <= 0.0 || batch_size < 1 || epochs < 1)
    throw ConfigError("TextModelConfig: bad training hyperparameters");
  if (tfidf_side_channel && tfidf_dim < 1)
    throw ConfigError("TextModelConfig: side channel enabled with tfidf_dim < 1");
}

TextModel TextModel::init(const TextModelConfig& config, Rng& rng) {
  config.validate();
  TextModel m;
  m.config = config;
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](Matrix& mat, double scale) {
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c) mat(r, c) = scale * gauss(rng);
  };
  m.embedding = Matrix(config.vocab_size, config.embedding_dim);
  fill(m.embedding, 0.1);
  m.embedding.row(Vocabulary::kPadId).setZero();
  for (int w : config.kernel_widths) {
    ConvLayer conv;
    conv.width = w;
    conv.weights = Matrix(config.feature_maps, w * config.embedding_dim);
    fill(conv.weights, std::sqrt(2.0 / static_cast<double>(w * config.embedding_dim)));
    conv.bias = Vector::Zero(config.feature_maps);
    m.convs.push_back(std::move(conv));
  }
  const int fc_in = config.pooled_dim() + (config.tfidf_side_channel ? config.tfidf_dim : 0);
  m.fc_weights = Matrix(config.num_codes, fc_in);
  fill(m.fc_weights, std::sqrt(1.0 / static_cast<double>(fc_in)));
  m.fc_bias = Vector::Zero(config.num_codes);
  return m;
}

Matrix smooth_labels(const IntMatrix& labels, double epsilon, int num_codes) {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw ConfigError("smooth_labels: epsilon must lie in [0,1]");
  if (num_codes < 1) throw ConfigError("smooth_labels: num_codes must be >= 1");
  for (Eigen::Index i = 0; i < labels.rows(); ++i)
    for (Eigen::Index j = 0; j < labels.cols(); ++j)
      if (labels(i, j) != 0 && labels(i, j) != 1)
        throw DataError("smooth_labels: labels must be binary");
  const double uniform = epsilon / static_cast<double>(num_codes);
  return (1.0 - epsilon) * labels.cast<double>().array() + uniform;
}

double sample_epsilon(double alpha, Rng& rng) {
  if (alpha <= 0.0) throw ConfigError("sample_epsilon: alpha must be > 0");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

double ce_loss(const Matrix& probabilities, const Matrix& smoothed_labels) {
  if (probabilities.rows() != smoothed_labels.rows() ||
      probabilities.cols() != smoothed_labels.cols())
    throw DataError("ce_loss: shape mismatch");
  const auto p = probabilities.array().cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
  const auto y = smoothed_labels.array();
  const double total = (y * p.log() + (1.0 - y) * (1.0 - p).log()).sum();
  return -total / static_cast<double>(probabilities.size());
}

Vector text_forward(const TextModel& model, const std::vector<int>& token_ids,
                    const Vector* tfidf, bool training, Rng* rng,
                    TextForwardCache* cache) {
  const auto& cfg = model.config;
  if (token_ids.empty()) throw DataError("text_forward: empty document");
  if (cfg.tfidf_side_channel) {
    if (tfidf == nullptr || tfidf->size() != cfg.tfidf_dim)
      throw DataError("text_forward: side channel enabled but tfidf vector missing/mis-sized");
  } else if (tfidf != nullptr && tfidf->size() != 0) {
    throw DataError("text_forward: tfidf vector supplied with side channel disabled");
  }

  int n = std::min<int>(static_cast<int>(token_ids.size()), cfg.max_tokens);
  // Trailing PAD in the input is padding, not content.
  while (n > 0 && token_ids[static_cast<std::size_t>(n - 1)] == Vocabulary::kPadId) --n;
  if (n == 0) throw DataError("text_forward: document is all padding");
  const int padded_len = std::max(n, cfg.max_kernel_width());
  std::vector<int> ids(token_ids.begin(), token_ids.begin() + n);
  ids.resize(static_cast<std::size_t>(padded_len), Vocabulary::kPadId);

  Matrix X(padded_len, cfg.embedding_dim);
  for (int p = 0; p < padded_len; ++p)
    X.row(p) = model.embedding.row(ids[static_cast<std::size_t>(p)]);

  const int fc_in = cfg.pooled_dim() + (cfg.tfidf_side_channel ? cfg.tfidf_dim : 0);
  Vector features = Vector::Zero(fc_in);
  std::vector<ConvCache> conv_caches;
  int offset = 0;
  for (const auto& conv : model.convs) {
    const int w = conv.width;
    // Windows starting past the last real token are skipped so appended PAD
    // can never win the max-pool.
    const int last_start = std::min(n - 1, padded_len - w);
    const int positions = last_start + 1;
    ConvCache cc;
    cc.preact = Matrix(cfg.feature_maps, positions);
    for (int t = 0; t < positions; ++t) {
      // Row-major flatten of the window.
      Vector win(w * cfg.embedding_dim);
      for (int u = 0; u < w; ++u)
        win.segment(u * cfg.embedding_dim, cfg.embedding_dim) = X.row(t + u).transpose();
      cc.preact.col(t) = conv.weights * win + conv.bias;
    }
    cc.argmax.resize(static_cast<std::size_t>(cfg.feature_maps));
    cc.pooled = Vector::Zero(cfg.feature_maps);
    for (int f = 0; f < cfg.feature_maps; ++f) {
      int best = 0;
      for (int t = 1; t < positions; ++t)
        if (cc.preact(f, t) > cc.preact(f, best)) best = t;
      cc.argmax[static_cast<std::size_t>(f)] = best;
      cc.pooled[f] = std::max(0.0, cc.preact(f, best));
    }
    features.segment(offset, cfg.feature_maps) = cc.pooled;
    offset += cfg.feature_maps;
    conv_caches.push_back(std::move(cc));
  }
  if (cfg.tfidf_side_channel) features.segment(offset, cfg.tfidf_dim) = *tfidf;

  Vector dropout_mask;
  Vector dropped = features;
  if (training && cfg.dropout_rate > 0.0) {
    if (rng == nullptr) throw ConfigError("text_forward: training dropout needs an rng");
    dropout_mask = Vector::Ones(fc_in);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double keep = 1.0 - cfg.dropout_rate;
    for (Eigen::Index i = 0; i < fc_in; ++i)
      dropout_mask[i] = unif(*rng) < keep ? 1.0 / keep : 0.0;
    dropped = features.cwiseProduct(dropout_mask);
  }

  Vector logits = model.fc_weights * dropped + model.fc_bias;
  Vector probs(cfg.num_codes);
  for (int j = 0; j < cfg.num_codes; ++j) probs[j] = sigmoid(logits[j]);

  if (cache) {
    cache->padded_ids = std::move(ids);
    cache->real_length = n;
    cache->inputs = std::move(X);
    cache->convs = std::move(conv_caches);
    cache->features = std::move(features);
    cache->dropout_mask = std::move(dropout_mask);
    cache->logits = std::move(logits);
    cache->probabilities = probs;
  }
  return probs;
}

TextGradients TextGradients::zeros(const TextModel& model) {
  TextGradients g;
  g.embedding = Matrix::Zero(model.embedding.rows(), model.embedding.cols());
  for (const auto& conv : model.convs) {
    ConvLayer c;
    c.width = conv.width;
    c.weights = Matrix::Zero(conv.weights.rows(), conv.weights.cols());
    c.bias = Vector::Zero(conv.bias.size());
    g.convs.push_back(std::move(c));
  }
  g.fc_weights = Matrix::Zero(model.fc_weights.rows(), model.fc_weights.cols());
  g.fc_bias = Vector::Zero(model.fc_bias.size());
  return g;
}

void TextGradients::add_l2(const TextModel& model, double l2) {
  if (l2 <= 0.0) return;
  embedding += l2 * model.embedding;
  embedding.row(Vocabulary::kPadId).setZero();
  for (std::size_t l = 0; l < convs.size(); ++l)
    convs[l].weights += l2 * model.convs[l].weights;
  fc_weights += l2 * model.fc_weights;
}

void text_backward(const TextModel& model, const TextForwardCache& cache,
                   const Vector& dlogits, TextGradients& grads) {
  const auto& cfg = model.config;
  const Vector dropped = cache.dropout_mask.size() > 0
                             ? cache.features.cwiseProduct(cache.dropout_mask).eval()
                             : cache.features;
  grads.fc_bias += dlogits;
  grads.fc_weights += dlogits * dropped.transpose();
  Vector dfeat = model.fc_weights.transpose() * dlogits;
  if (cache.dropout_mask.size() > 0) dfeat = dfeat.cwiseProduct(cache.dropout_mask);

  Matrix dX = Matrix::Zero(cache.inputs.rows(), cache.inputs.cols());
  int offset = 0;
  for (std::size_t l = 0; l < model.convs.size(); ++l) {
    const auto& conv = model.convs[l];
    const auto& cc = cache.convs[l];
    for (int f = 0; f < cfg.feature_maps; ++f) {
      const double dpool = dfeat[offset + f];
      const int t = cc.argmax[static_cast<std::size_t>(f)];
      if (dpool == 0.0 || cc.preact(f, t) <= 0.0) continue;  // ReLU gate
      grads.convs[l].bias[f] += dpool;
      for (int u = 0; u < conv.width; ++u) {
        grads.convs[l].weights.row(f).segment(u * cfg.embedding_dim, cfg.embedding_dim) +=
            dpool * cache.inputs.row(t + u);
        dX.row(t + u) +=
            dpool * conv.weights.row(f).segment(u * cfg.embedding_dim, cfg.embedding_dim);
      }
    }
    offset += cfg.feature_maps;
  }
  for (Eigen::Index p = 0; p < dX.rows(); ++p) {
    const int id = cache.padded_ids[static_cast<std::size_t>(p)];
    if (id == Vocabulary::kPadId) continue;
    grads.embedding.row(id) += dX.row(p);
  }
}

Matrix predict_text(const TextModel& model, const std::vector<TextTrainExample>& examples) {
  Matrix probs(static_cast<Eigen::Index>(examples.size()), model.config.num_codes);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Vector* tfidf =
        model.config.tfidf_side_channel ? &examples[i].tfidf : nullptr;
    probs.row(static_cast<Eigen::Index>(i)) =
        text_forward(model, examples[i].token_ids, tfidf).transpose();
  }
  return probs;
}

namespace {

std::vector<AdamOptimizer::Slot> make_slots(TextModel& model, TextGradients& grads) {
  std::vector<AdamOptimizer::Slot> slots;
  slots.push_back({model.embedding.data(), grads.embedding.data(), model.embedding.size()});
  for (std::size_t l = 0; l < model.convs.size(); ++l) {
    slots.push_back({model.convs[l].weights.data(), grads.convs[l].weights.data(),
                     model.convs[l].weights.size()});
    slots.push_back({model.convs[l].bias.data(), grads.convs[l].bias.data(),
                     model.convs[l].bias.size()});
  }
  slots.push_back({model.fc_weights.data(), grads.fc_weights.data(), model.fc_weights.size()});
  slots.push_back({model.fc_bias.data(), grads.fc_bias.data(), model.fc_bias.size()});
  return slots;
}

double validation_micro_f1(const TextModel& model,
                           const std::vector<TextTrainExample>& validation_set) {
  if (validation_set.empty()) return 0.0;
  const Matrix probs = predict_text(model, validation_set);
  IntMatrix decisions(probs.rows(), probs.cols());
  IntMatrix labels(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      decisions(i, j) = probs(i, j) >= 0.5 ? 1 : 0;
      labels(i, j) = validation_set[static_cast<std::size_t>(i)].labels[j];
    }
  }
  return f1_scores(decisions, labels).micro;
}

}  // namespace

TextTrainResult train_text(const TextModelConfig& config,
                           const std::vector<TextTrainExample>& training_set,
                           const std::vector<TextTrainExample>& validation_set) {
  config.validate();
  if (training_set.empty()) throw DataError("train_text: empty training set");

  Rng rng(config.seed);
  TextModel model = TextModel::init(config, rng);
  TextGradients grads = TextGradients::zeros(model);
  AdamOptimizer adam(config.learning_rate);
  auto slots = make_slots(model, grads);

  TextTrainResult result;
  result.model = model;
  double best_val = -1.0;

  const int N = static_cast<int>(training_set.size());
  const int C = config.num_codes;
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    double eps_sum = 0.0;
    long cells = 0;
    int batches = 0;
    for (int start = 0; start < N; start += config.batch_size) {
      const int bs = std::min(config.batch_size, N - start);
      // One smoothing draw per mini-batch.
      const double eps =
          config.smoothing_alpha > 0.0 ? sample_epsilon(config.smoothing_alpha, rng) : 0.0;
      eps_sum += eps;
      ++batches;

      IntMatrix batch_labels(bs, C);
      for (int b = 0; b < bs; ++b)
        batch_labels.row(b) =
            training_set[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])]
                .labels.transpose();
      const Matrix smoothed = smooth_labels(batch_labels, eps, C);

      grads.embedding.setZero();
      for (auto& g : grads.convs) {
        g.weights.setZero();
        g.bias.setZero();
      }
      grads.fc_weights.setZero();
      grads.fc_bias.setZero();

      Matrix probs(bs, C);
      const double scale = 1.0 / static_cast<double>(bs * C);
      for (int b = 0; b < bs; ++b) {
        const auto& ex =
            training_set[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
        TextForwardCache cache;
        const Vector* tfidf = config.tfidf_side_channel ? &ex.tfidf : nullptr;
        probs.row(b) = text_forward(model, ex.token_ids, tfidf, true, &rng, &cache).transpose();
        const Vector dlogits =
            scale * (cache.probabilities - smoothed.row(b).transpose());
        text_backward(model, cache, dlogits, grads);
      }
      const double batch_loss = ce_loss(probs, smoothed);
      if (std::isnan(batch_loss))
        throw DataError("train_text: NaN loss at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss * static_cast<double>(bs * C);
      cells += bs * C;

      grads.add_l2(model, config.l2_coefficient);
      adam.step(slots);
      model.embedding.row(Vocabulary::kPadId).setZero();
    }

    TextEpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(cells);
    log.mean_epsilon = batches > 0 ? eps_sum / batches : 0.0;
    log.validation_micro_f1 = validation_micro_f1(model, validation_set);
    result.log.push_back(log);
    if (validation_set.empty() || log.validation_micro_f1 >= best_val) {
      best_val = log.validation_micro_f1;
      result.model = model;
    }
  }
  return result;
}

void TextModel::save(const std::string& path) const {
  TensorArchive a;
  a.meta["schema_version"] = 1;
  a.meta["kind"] = "text_model";
  a.meta["config"] = {{"vocab_size", config.vocab_size},
                      {"num_codes", config.num_codes},
                      {"embedding_dim", config.embedding_dim},
                      {"kernel_widths", config.kernel_widths},
                      {"feature_maps", config.feature_maps},
                      {"dropout_rate", config.dropout_rate},
                      {"l2_coefficient", config.l2_coefficient},
                      {"learning_rate", config.learning_rate},
                      {"batch_size", config.batch_size},
                      {"smoothing_alpha", config.smoothing_alpha},
                      {"tfidf_side_channel", config.tfidf_side_channel},
                      {"tfidf_dim", config.tfidf_dim},
                      {"epochs", config.epochs},
                      {"max_tokens", config.max_tokens},
                      {"seed", config.seed}};
  a.add("embedding", embedding);
  for (std::size_t l = 0; l < convs.size(); ++l) {
    a.add("conv" + std::to_string(l) + ".weights", convs[l].weights);
    a.add("conv" + std::to_string(l) + ".bias", convs[l].bias);
  }
  a.add("fc.weights", fc_weights);
  a.add("fc.bias", fc_bias);
  a.save(path);
}

TextModel TextModel::load(const std::string& path) {
  const TensorArchive a = TensorArchive::load(path);
  if (a.meta.value("kind", "") != "text_model")
    throw DataError("TextModel::load: not a text model checkpoint");
  const auto& c = a.meta.at("config");
  TextModel m;
  m.config.vocab_size = c.at("vocab_size").get<int>();
  m.config.num_codes = c.at("num_codes").get<int>();
  m.config.embedding_dim = c.at("embedding_dim").get<int>();
  m.config.kernel_widths = c.at("kernel_widths").get<std::vector<int>>();
  m.config.feature_maps = c.at("feature_maps").get<int>();
  m.config.dropout_rate = c.at("dropout_rate").get<double>();
  m.config.l2_coefficient = c.at("l2_coefficient").get<double>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.batch_size = c.at("batch_size").get<int>();
  m.config.smoothing_alpha = c.at("smoothing_alpha").get<double>();
  m.config.tfidf_side_channel = c.at("tfidf_side_channel").get<bool>();
  m.config.tfidf_dim = c.at("tfidf_dim").get<int>();
  m.config.epochs = c.at("epochs").get<int>();
  m.config.max_tokens = c.at("max_tokens").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.embedding = a.get("embedding");
  for (std::size_t l = 0; l < m.config.kernel_widths.size(); ++l) {
    ConvLayer conv;
    conv.width = m.config.kernel_widths[l];
    conv.weights = a.get("conv" + std::to_string(l) + ".weights");
    conv.bias = a.get_vector("conv" + std::to_string(l) + ".bias");
    m.convs.push_back(std::move(conv));
  }
  m.fc_weights = a.get("fc.weights");
  m.fc_bias = a.get_vector("fc.bias");
  return m;
}

}  // namespace medcoder
