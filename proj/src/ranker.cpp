#include "medcoder/ranker.hpp"

#include "medcoder/adam.hpp"
#include "medcoder/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

namespace medcoder {

using json = nlohmann::ordered_json;

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string normalized_join(const std::string& s) {
  std::string out;
  for (const auto& t : normalize_text(s)) {
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

}  // namespace

void RankerConfig::validate() const {
  if (margin <= 0.0) throw ConfigError("RankerConfig: margin must be > 0");
  if (char_embedding_dim < 1 || word_embedding_dim < 1 || hidden_units < 1 ||
      char_filters < 1)
    throw ConfigError("RankerConfig: dims must be positive");
  if (char_kernel_widths.empty()) throw ConfigError("RankerConfig: no char kernel widths");
  if (ngram_min < 1 || ngram_max < ngram_min)
    throw ConfigError("RankerConfig: bad n-gram length range");
  if (negatives_per_anchor < 1)
    throw ConfigError("RankerConfig: negatives_per_anchor must be >= 1");
  if (learning_rate <= 0.0 || batch_size < 1 || epochs < 1)
    throw ConfigError("RankerConfig: bad training hyperparameters");
}

int char_vocab_size() { return 2 + 26 + 10; }

int char_id(char c) {
  const unsigned char u = static_cast<unsigned char>(c);
  const char l = static_cast<char>(std::tolower(u));
  if (l >= 'a' && l <= 'z') return 2 + (l - 'a');
  if (l >= '0' && l <= '9') return 2 + 26 + (l - '0');
  return 1;  // UNK
}

RankerModel init_ranker(const RankerConfig& config, const Vocabulary& word_vocab, Rng& rng) {
  config.validate();
  RankerModel m;
  m.config = config;
  m.word_vocab = word_vocab;
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](Matrix& mat, double scale) {
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c) mat(r, c) = scale * gauss(rng);
  };
  m.char_embedding = Matrix(char_vocab_size(), config.char_embedding_dim);
  fill(m.char_embedding, 0.1);
  m.char_embedding.row(0).setZero();  // PAD
  for (int w : config.char_kernel_widths) {
    CharConvLayer conv;
    conv.width = w;
    conv.weights = Matrix(config.char_filters, w * config.char_embedding_dim);
    fill(conv.weights, std::sqrt(2.0 / static_cast<double>(w * config.char_embedding_dim)));
    conv.bias = Vector::Zero(config.char_filters);
    m.char_convs.push_back(std::move(conv));
  }
  m.word_embedding = Matrix(word_vocab.size(), config.word_embedding_dim);
  fill(m.word_embedding, 0.1);
  m.word_embedding.row(Vocabulary::kPadId).setZero();
  const int H = config.hidden_units, In = config.token_input_dim();
  auto init_lstm = [&](LstmParams& p) {
    p.wx = Matrix(4 * H, In);
    fill(p.wx, std::sqrt(1.0 / static_cast<double>(In)));
    p.wh = Matrix(4 * H, H);
    fill(p.wh, std::sqrt(1.0 / static_cast<double>(H)));
    p.b = Vector::Zero(4 * H);
    // Forget-gate bias starts positive.
    p.b.segment(H, H).setConstant(1.0);
  };
  init_lstm(m.forward_lstm);
  init_lstm(m.backward_lstm);
  return m;
}

namespace {

struct CharConvCache {
  Matrix preact;  // filters x positions
  std::vector<int> argmax;
};

struct TokenCache {
  std::vector<int> char_ids;  // padded
  int real_len = 0;
  std::vector<CharConvCache> convs;
  Vector features;  // char_feature_dim
};

struct LstmCache {
  Matrix x;       // In x T
  Matrix i, f, g, o, c, tanh_c, h;  // H x T
};

struct EncodeCache {
  std::vector<int> word_ids;
  std::vector<TokenCache> tokens;
  LstmCache fwd, bwd;  // bwd runs over reversed time but stores t in original order
  Matrix outputs;      // 2H x T
  std::vector<int> pool_argmax;  // per output dim
  Vector embedding;
};

TokenCache char_cnn_forward(const RankerModel& model, const std::string& token) {
  const auto& cfg = model.config;
  TokenCache tc;
  for (char c : token) tc.char_ids.push_back(char_id(c));
  tc.real_len = static_cast<int>(tc.char_ids.size());
  if (tc.real_len == 0) {
    tc.char_ids.push_back(1);
    tc.real_len = 1;
  }
  int wmax = 1;
  for (int w : cfg.char_kernel_widths) wmax = std::max(wmax, w);
  const int padded = std::max(tc.real_len, wmax);
  tc.char_ids.resize(static_cast<std::size_t>(padded), 0);

  Matrix X(padded, cfg.char_embedding_dim);
  for (int p = 0; p < padded; ++p)
    X.row(p) = model.char_embedding.row(tc.char_ids[static_cast<std::size_t>(p)]);

  tc.features = Vector::Zero(cfg.char_feature_dim());
  int offset = 0;
  for (const auto& conv : model.char_convs) {
    const int w = conv.width;
    const int last_start = std::min(tc.real_len - 1, padded - w);
    const int positions = last_start + 1;
    CharConvCache cc;
    cc.preact = Matrix(cfg.char_filters, positions);
    for (int t = 0; t < positions; ++t) {
      Vector win(w * cfg.char_embedding_dim);
      for (int u = 0; u < w; ++u)
        win.segment(u * cfg.char_embedding_dim, cfg.char_embedding_dim) =
            X.row(t + u).transpose();
      cc.preact.col(t) = conv.weights * win + conv.bias;
    }
    cc.argmax.resize(static_cast<std::size_t>(cfg.char_filters));
    for (int f = 0; f < cfg.char_filters; ++f) {
      int best = 0;
      for (int t = 1; t < positions; ++t)
        if (cc.preact(f, t) > cc.preact(f, best)) best = t;
      cc.argmax[static_cast<std::size_t>(f)] = best;
      tc.features[offset + f] = std::max(0.0, cc.preact(f, best));
    }
    offset += cfg.char_filters;
    tc.convs.push_back(std::move(cc));
  }
  return tc;
}

void lstm_forward(const LstmParams& p, const Matrix& inputs /*In x T*/, bool reverse,
                  int H, LstmCache& cache) {
  const Eigen::Index T = inputs.cols();
  cache.x = inputs;
  cache.i = cache.f = cache.g = cache.o = cache.c = cache.tanh_c = cache.h =
      Matrix::Zero(H, T);
  Vector h_prev = Vector::Zero(H), c_prev = Vector::Zero(H);
  for (Eigen::Index step = 0; step < T; ++step) {
    const Eigen::Index t = reverse ? T - 1 - step : step;
    const Vector z = p.wx * inputs.col(t) + p.wh * h_prev + p.b;
    for (int k = 0; k < H; ++k) {
      cache.i(k, t) = sigmoid(z[k]);
      cache.f(k, t) = sigmoid(z[H + k]);
      cache.g(k, t) = std::tanh(z[2 * H + k]);
      cache.o(k, t) = sigmoid(z[3 * H + k]);
      cache.c(k, t) = cache.f(k, t) * c_prev[k] + cache.i(k, t) * cache.g(k, t);
      cache.tanh_c(k, t) = std::tanh(cache.c(k, t));
      cache.h(k, t) = cache.o(k, t) * cache.tanh_c(k, t);
    }
    h_prev = cache.h.col(t);
    c_prev = cache.c.col(t);
  }
}

struct LstmGrads {
  Matrix wx, wh;
  Vector b;
};

// Returns d(loss)/d(inputs); dh_out is the per-step gradient on h.
Matrix lstm_backward(const LstmParams& p, const LstmCache& cache, const Matrix& dh_out,
                     bool reverse, int H, LstmGrads& grads) {
  const Eigen::Index T = cache.x.cols();
  Matrix dx = Matrix::Zero(cache.x.rows(), T);
  Vector dh_next = Vector::Zero(H), dc_next = Vector::Zero(H);
  for (Eigen::Index step = T - 1; step >= 0; --step) {
    // Walk time in the opposite order of the forward pass.
    const Eigen::Index t = reverse ? T - 1 - step : step;
    const Eigen::Index t_prev_step = step - 1;
    const Eigen::Index t_prev =
        t_prev_step >= 0 ? (reverse ? T - 1 - t_prev_step : t_prev_step) : -1;

    Vector dh = dh_out.col(t) + dh_next;
    Vector dc = dc_next;
    Vector da(4 * H);
    for (int k = 0; k < H; ++k) {
      const double i = cache.i(k, t), f = cache.f(k, t), g = cache.g(k, t),
                   o = cache.o(k, t), tc = cache.tanh_c(k, t);
      const double c_prev = t_prev >= 0 ? cache.c(k, t_prev) : 0.0;
      double dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
      const double dok = dh[k] * tc;
      da[3 * H + k] = dok * o * (1.0 - o);
      da[k] = dck * g * i * (1.0 - i);
      da[2 * H + k] = dck * i * (1.0 - g * g);
      da[H + k] = dck * c_prev * f * (1.0 - f);
      dc_next[k] = dck * f;
    }
    const Vector h_prev = t_prev >= 0 ? Vector(cache.h.col(t_prev)) : Vector(Vector::Zero(H));
    grads.wx += da * cache.x.col(t).transpose();
    grads.wh += da * h_prev.transpose();
    grads.b += da;
    dx.col(t) = p.wx.transpose() * da;
    dh_next = p.wh.transpose() * da;
  }
  return dx;
}

Vector encode_with_cache(const RankerModel& model, const std::string& phrase,
                         EncodeCache* cache_out) {
  const auto& cfg = model.config;
  const auto raw = normalize_text(phrase);
  if (raw.empty()) throw DataError("encode: phrase empty after tokenization");

  EncodeCache cache;
  const int T = static_cast<int>(raw.size());
  Matrix inputs(cfg.token_input_dim(), T);
  for (int t = 0; t < T; ++t) {
    const int wid = model.word_vocab.lookup(raw[static_cast<std::size_t>(t)].text);
    cache.word_ids.push_back(wid);
    TokenCache tc = char_cnn_forward(model, raw[static_cast<std::size_t>(t)].text);
    inputs.col(t).head(cfg.word_embedding_dim) = model.word_embedding.row(wid).transpose();
    inputs.col(t).tail(cfg.char_feature_dim()) = tc.features;
    cache.tokens.push_back(std::move(tc));
  }

  const int H = cfg.hidden_units;
  lstm_forward(model.forward_lstm, inputs, false, H, cache.fwd);
  lstm_forward(model.backward_lstm, inputs, true, H, cache.bwd);
  cache.outputs = Matrix(2 * H, T);
  cache.outputs.topRows(H) = cache.fwd.h;
  cache.outputs.bottomRows(H) = cache.bwd.h;

  cache.pool_argmax.resize(static_cast<std::size_t>(2 * H));
  cache.embedding = Vector(2 * H);
  for (int d = 0; d < 2 * H; ++d) {
    int best = 0;
    for (int t = 1; t < T; ++t)
      if (cache.outputs(d, t) > cache.outputs(d, best)) best = t;
    cache.pool_argmax[static_cast<std::size_t>(d)] = best;
    cache.embedding[d] = cache.outputs(d, best);
  }
  Vector out = cache.embedding;
  if (cache_out) *cache_out = std::move(cache);
  return out;
}

struct RankerGradients {
  Matrix char_embedding;
  std::vector<CharConvLayer> char_convs;
  Matrix word_embedding;
  LstmGrads fwd, bwd;

  static RankerGradients zeros(const RankerModel& m) {
    RankerGradients g;
    g.char_embedding = Matrix::Zero(m.char_embedding.rows(), m.char_embedding.cols());
    for (const auto& c : m.char_convs) {
      CharConvLayer z;
      z.width = c.width;
      z.weights = Matrix::Zero(c.weights.rows(), c.weights.cols());
      z.bias = Vector::Zero(c.bias.size());
      g.char_convs.push_back(std::move(z));
    }
    g.word_embedding = Matrix::Zero(m.word_embedding.rows(), m.word_embedding.cols());
    auto zl = [&](const LstmParams& p) {
      return LstmGrads{Matrix::Zero(p.wx.rows(), p.wx.cols()),
                       Matrix::Zero(p.wh.rows(), p.wh.cols()), Vector::Zero(p.b.size())};
    };
    g.fwd = zl(m.forward_lstm);
    g.bwd = zl(m.backward_lstm);
    return g;
  }

  void set_zero() {
    char_embedding.setZero();
    for (auto& c : char_convs) {
      c.weights.setZero();
      c.bias.setZero();
    }
    word_embedding.setZero();
    fwd.wx.setZero();
    fwd.wh.setZero();
    fwd.b.setZero();
    bwd.wx.setZero();
    bwd.wh.setZero();
    bwd.b.setZero();
  }
};

void encode_backward(const RankerModel& model, const EncodeCache& cache,
                     const Vector& dembedding, RankerGradients& grads) {
  const auto& cfg = model.config;
  const int H = cfg.hidden_units;
  const Eigen::Index T = cache.outputs.cols();

  Matrix dout = Matrix::Zero(2 * H, T);
  for (int d = 0; d < 2 * H; ++d)
    dout(d, cache.pool_argmax[static_cast<std::size_t>(d)]) += dembedding[d];

  const Matrix dx_fwd = lstm_backward(model.forward_lstm, cache.fwd, dout.topRows(H),
                                      false, H, grads.fwd);
  const Matrix dx_bwd = lstm_backward(model.backward_lstm, cache.bwd, dout.bottomRows(H),
                                      true, H, grads.bwd);
  const Matrix dx = dx_fwd + dx_bwd;

  for (Eigen::Index t = 0; t < T; ++t) {
    const int wid = cache.word_ids[static_cast<std::size_t>(t)];
    if (wid != Vocabulary::kPadId)
      grads.word_embedding.row(wid) += dx.col(t).head(cfg.word_embedding_dim).transpose();

    const Vector dfeat = dx.col(t).tail(cfg.char_feature_dim());
    const auto& tc = cache.tokens[static_cast<std::size_t>(t)];
    int offset = 0;
    Matrix dXc = Matrix::Zero(static_cast<Eigen::Index>(tc.char_ids.size()),
                              cfg.char_embedding_dim);
    for (std::size_t l = 0; l < model.char_convs.size(); ++l) {
      const auto& conv = model.char_convs[l];
      const auto& cc = tc.convs[l];
      for (int f = 0; f < cfg.char_filters; ++f) {
        const double dpool = dfeat[offset + f];
        const int tau = cc.argmax[static_cast<std::size_t>(f)];
        if (dpool == 0.0 || cc.preact(f, tau) <= 0.0) continue;
        grads.char_convs[l].bias[f] += dpool;
        for (int u = 0; u < conv.width; ++u) {
          const int cid = tc.char_ids[static_cast<std::size_t>(tau + u)];
          grads.char_convs[l].weights.row(f).segment(u * cfg.char_embedding_dim,
                                                     cfg.char_embedding_dim) +=
              dpool * model.char_embedding.row(cid);
          dXc.row(tau + u) +=
              dpool *
              conv.weights.row(f).segment(u * cfg.char_embedding_dim, cfg.char_embedding_dim);
        }
      }
      offset += cfg.char_filters;
    }
    for (Eigen::Index p = 0; p < dXc.rows(); ++p) {
      const int cid = tc.char_ids[static_cast<std::size_t>(p)];
      if (cid != 0) grads.char_embedding.row(cid) += dXc.row(p);
    }
  }
}

std::vector<AdamOptimizer::Slot> make_slots(RankerModel& m, RankerGradients& g) {
  std::vector<AdamOptimizer::Slot> s;
  s.push_back({m.char_embedding.data(), g.char_embedding.data(), m.char_embedding.size()});
  for (std::size_t l = 0; l < m.char_convs.size(); ++l) {
    s.push_back({m.char_convs[l].weights.data(), g.char_convs[l].weights.data(),
                 m.char_convs[l].weights.size()});
    s.push_back({m.char_convs[l].bias.data(), g.char_convs[l].bias.data(),
                 m.char_convs[l].bias.size()});
  }
  s.push_back({m.word_embedding.data(), g.word_embedding.data(), m.word_embedding.size()});
  auto add_lstm = [&](LstmParams& p, LstmGrads& gr) {
    s.push_back({p.wx.data(), gr.wx.data(), p.wx.size()});
    s.push_back({p.wh.data(), gr.wh.data(), p.wh.size()});
    s.push_back({p.b.data(), gr.b.data(), p.b.size()});
  };
  add_lstm(m.forward_lstm, g.fwd);
  add_lstm(m.backward_lstm, g.bwd);
  return s;
}

}  // namespace

Vector encode(const RankerModel& model, const std::string& phrase) {
  return encode_with_cache(model, phrase, nullptr);
}

Vector char_features(const RankerModel& model, const std::string& token) {
  return char_cnn_forward(model, token).features;
}

double triplet_loss(const std::vector<Vector>& anchors, const std::vector<Vector>& positives,
                    const std::vector<Vector>& negatives, double margin) {
  if (margin <= 0.0) throw ConfigError("triplet_loss: margin must be > 0");
  if (anchors.size() != positives.size() || anchors.size() != negatives.size())
    throw DataError("triplet_loss: batch size mismatch");
  if (anchors.empty()) throw DataError("triplet_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (anchors[i].size() != positives[i].size() || anchors[i].size() != negatives[i].size())
      throw DataError("triplet_loss: embedding dimension mismatch");
    const double dp = (anchors[i] - positives[i]).norm();
    const double dn = (anchors[i] - negatives[i]).norm();
    total += std::max(dp - dn + margin, 0.0);
  }
  return total / static_cast<double>(anchors.size());
}

long levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::string SynonymCorpus::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "synonym_corpus";
  json obj = json::object();
  for (const auto& e : entries)
    obj[e.code] = {{"description", e.description},
                   {"positives", e.positives},
                   {"negatives", e.negatives}};
  j["codes"] = std::move(obj);
  return j.dump(2);
}

SynonymCorpus SynonymCorpus::from_json(const std::string& text) {
  const json j = json::parse(text);
  SynonymCorpus c;
  for (const auto& [code, e] : j.at("codes").items()) {
    Entry entry;
    entry.code = code;
    entry.description = e.at("description").get<std::string>();
    entry.positives = e.at("positives").get<std::vector<std::string>>();
    entry.negatives = e.value("negatives", std::vector<std::string>{});
    for (const auto& n : entry.negatives)
      for (const auto& p : entry.positives)
        if (n == p)
          throw DataError("SynonymCorpus: '" + n + "' is both positive and negative for " +
                          code);
    c.entries.push_back(std::move(entry));
  }
  return c;
}

SynonymCorpus SynonymCorpus::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("SynonymCorpus::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void SynonymCorpus::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("SynonymCorpus::save: cannot open " + path);
  f << to_json();
}

SynonymCorpus mine_negatives(const CodeCatalog& catalog,
                             const std::vector<std::string>& text_corpus,
                             const RankerConfig& config) {
  config.validate();

  // Candidate n-grams over normalized tokens from every source string.
  std::set<std::string> candidate_set;
  auto harvest = [&](const std::string& s) {
    std::vector<std::string> toks;
    for (auto& t : normalize_text(s)) toks.push_back(std::move(t.text));
    const int n = static_cast<int>(toks.size());
    for (int len = config.ngram_min; len <= config.ngram_max; ++len) {
      for (int start = 0; start + len <= n; ++start) {
        std::string gram = toks[static_cast<std::size_t>(start)];
        for (int u = 1; u < len; ++u) gram += ' ' + toks[static_cast<std::size_t>(start + u)];
        candidate_set.insert(std::move(gram));
      }
    }
  };
  for (const auto& c : catalog.codes) {
    harvest(c.description);
    for (const auto& s : c.synonyms) harvest(s);
  }
  for (const auto& t : text_corpus) harvest(t);
  if (candidate_set.empty()) throw DataError("mine_negatives: no candidate n-grams");
  const std::vector<std::string> candidates(candidate_set.begin(), candidate_set.end());

  SynonymCorpus out;
  for (const auto& c : catalog.codes) {
    SynonymCorpus::Entry entry;
    entry.code = c.code;
    entry.description = c.description;
    entry.positives.push_back(c.description);
    for (const auto& s : c.synonyms) entry.positives.push_back(s);

    std::set<std::string> positive_norms;
    for (const auto& p : entry.positives) positive_norms.insert(normalized_join(p));
    const std::string anchor = normalized_join(c.description);

    std::vector<std::pair<long, const std::string*>> scored;
    for (const auto& cand : candidates) {
      if (positive_norms.count(cand)) continue;
      scored.emplace_back(levenshtein(anchor, cand), &cand);
    }
    if (scored.empty()) throw DataError("mine_negatives: no candidates for " + c.code);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : *a.second < *b.second;
    });
    const int k = config.negatives_per_anchor;
    if (static_cast<int>(scored.size()) < k)
      std::cerr << "mine_negatives: only " << scored.size() << " candidates for " << c.code
                << " (requested " << k << ")\n";
    const int take = std::min<int>(k, static_cast<int>(scored.size()));
    for (int i = 0; i < take; ++i) entry.negatives.push_back(*scored[static_cast<std::size_t>(i)].second);
    out.entries.push_back(std::move(entry));
  }
  return out;
}

Vector rank_codes(const RankerModel& model, const std::vector<std::string>& diagnosis_phrases,
                  const CodeCatalog& catalog) {
  if (diagnosis_phrases.empty()) throw DataError("rank_codes: no diagnosis phrases");
  const int C = catalog.size();
  std::vector<Vector> code_embeddings;
  code_embeddings.reserve(static_cast<std::size_t>(C));
  for (const auto& c : catalog.codes) code_embeddings.push_back(encode(model, c.description));

  Vector mean_scores = Vector::Zero(C);
  for (const auto& phrase : diagnosis_phrases) {
    const Vector e = encode(model, phrase);
    Vector dist(C);
    for (int j = 0; j < C; ++j) dist[j] = (e - code_embeddings[static_cast<std::size_t>(j)]).norm();
    const double lo = dist.minCoeff(), hi = dist.maxCoeff();
    Vector scores(C);
    if (hi - lo < 1e-12) {
      scores.setConstant(0.5);  // degenerate min-max
    } else {
      for (int j = 0; j < C; ++j) scores[j] = 1.0 - (dist[j] - lo) / (hi - lo);
    }
    mean_scores += scores;
  }
  return mean_scores / static_cast<double>(diagnosis_phrases.size());
}

namespace {

double ranking_accuracy(const RankerModel& model, const SynonymCorpus& corpus,
                        const std::vector<std::pair<std::string, int>>& validation) {
  if (validation.empty()) return 0.0;
  std::vector<Vector> desc;
  desc.reserve(corpus.entries.size());
  for (const auto& e : corpus.entries) desc.push_back(encode(model, e.description));
  int hits = 0;
  for (const auto& [phrase, code_idx] : validation) {
    const Vector v = encode(model, phrase);
    int best = 0;
    double best_d = (v - desc[0]).norm();
    for (std::size_t j = 1; j < desc.size(); ++j) {
      const double d = (v - desc[j]).norm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    hits += best == code_idx;
  }
  return static_cast<double>(hits) / static_cast<double>(validation.size());
}

}  // namespace

RankerTrainResult train_ranker(const RankerConfig& config, const SynonymCorpus& corpus,
                               const std::vector<std::pair<std::string, int>>& validation) {
  config.validate();
  for (const auto& e : corpus.entries)
    if (e.positives.empty() || e.negatives.empty())
      throw DataError("train_ranker: degenerate corpus entry for " + e.code);
  if (corpus.entries.empty()) throw DataError("train_ranker: empty corpus");

  // Word vocabulary from every string the encoder will see.
  std::vector<std::string> vocab_docs;
  for (const auto& e : corpus.entries) {
    vocab_docs.push_back(e.description);
    for (const auto& p : e.positives) vocab_docs.push_back(p);
    for (const auto& n : e.negatives) vocab_docs.push_back(n);
  }
  const Vocabulary vocab = build_vocabulary(vocab_docs, 1);

  Rng rng(config.seed);
  RankerModel model = init_ranker(config, vocab, rng);
  RankerGradients grads = RankerGradients::zeros(model);
  AdamOptimizer adam(config.learning_rate);
  auto slots = make_slots(model, grads);

  RankerTrainResult result;
  result.model = model;
  double best_acc = -1.0;

  // One triplet per (entry, positive) pair per epoch.
  struct Anchor {
    int entry;
    int positive;
  };
  std::vector<Anchor> anchors;
  for (int e = 0; e < static_cast<int>(corpus.entries.size()); ++e)
    for (int p = 0; p < static_cast<int>(corpus.entries[static_cast<std::size_t>(e)].positives.size()); ++p)
      anchors.push_back({e, p});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(anchors.begin(), anchors.end(), rng);
    double epoch_loss = 0.0;
    long triplets = 0;
    for (std::size_t start = 0; start < anchors.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(anchors.size(), start + static_cast<std::size_t>(config.batch_size));
      const int bs = static_cast<int>(end - start);
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& e = corpus.entries[static_cast<std::size_t>(anchors[k].entry)];
        const std::string& anchor_str =
            e.positives[static_cast<std::size_t>(anchors[k].positive)];
        // Positive: the description unless the anchor is the description, in
        // which case a random other positive.
        std::string positive_str = e.description;
        if (anchor_str == e.description && e.positives.size() > 1) {
          std::uniform_int_distribution<std::size_t> pick(1, e.positives.size() - 1);
          positive_str = e.positives[pick(rng)];
        }
        std::uniform_int_distribution<std::size_t> pick_neg(0, e.negatives.size() - 1);
        const std::string& negative_str = e.negatives[pick_neg(rng)];

        EncodeCache ca, cp, cn;
        const Vector va = encode_with_cache(model, anchor_str, &ca);
        const Vector vp = encode_with_cache(model, positive_str, &cp);
        const Vector vn = encode_with_cache(model, negative_str, &cn);
        const double dp = std::max((va - vp).norm(), 1e-12);
        const double dn = std::max((va - vn).norm(), 1e-12);
        const double hinge = dp - dn + config.margin;
        batch_loss += std::max(hinge, 0.0);
        if (hinge > 0.0) {
          const double scale = 1.0 / static_cast<double>(bs);
          const Vector da = scale * ((va - vp) / dp - (va - vn) / dn);
          const Vector dpv = scale * (-(va - vp) / dp);
          const Vector dnv = scale * ((va - vn) / dn);
          encode_backward(model, ca, da, grads);
          encode_backward(model, cp, dpv, grads);
          encode_backward(model, cn, dnv, grads);
        }
      }
      epoch_loss += batch_loss;
      triplets += bs;
      adam.step(slots);
      model.char_embedding.row(0).setZero();
      model.word_embedding.row(Vocabulary::kPadId).setZero();
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(triplets));

    const double acc = ranking_accuracy(model, corpus, validation);
    if (validation.empty() || acc >= best_acc) {
      best_acc = acc;
      result.model = model;
    }
  }
  result.best_validation_accuracy = std::max(best_acc, 0.0);
  return result;
}

void RankerModel::save(const std::string& path) const {
  TensorArchive a;
  a.meta["schema_version"] = 1;
  a.meta["kind"] = "ranker_model";
  a.meta["config"] = {{"char_embedding_dim", config.char_embedding_dim},
                      {"char_kernel_widths", config.char_kernel_widths},
                      {"char_filters", config.char_filters},
                      {"word_embedding_dim", config.word_embedding_dim},
                      {"hidden_units", config.hidden_units},
                      {"margin", config.margin},
                      {"ngram_min", config.ngram_min},
                      {"ngram_max", config.ngram_max},
                      {"negatives_per_anchor", config.negatives_per_anchor},
                      {"learning_rate", config.learning_rate},
                      {"batch_size", config.batch_size},
                      {"epochs", config.epochs},
                      {"seed", config.seed}};
  a.meta["vocabulary"] = nlohmann::ordered_json::parse(word_vocab.to_json());
  a.add("char_embedding", char_embedding);
  for (std::size_t l = 0; l < char_convs.size(); ++l) {
    a.add("char_conv" + std::to_string(l) + ".weights", char_convs[l].weights);
    a.add("char_conv" + std::to_string(l) + ".bias", char_convs[l].bias);
  }
  a.add("word_embedding", word_embedding);
  a.add("lstm_fwd.wx", forward_lstm.wx);
  a.add("lstm_fwd.wh", forward_lstm.wh);
  a.add("lstm_fwd.b", forward_lstm.b);
  a.add("lstm_bwd.wx", backward_lstm.wx);
  a.add("lstm_bwd.wh", backward_lstm.wh);
  a.add("lstm_bwd.b", backward_lstm.b);
  a.save(path);
}

RankerModel RankerModel::load(const std::string& path) {
  const TensorArchive a = TensorArchive::load(path);
  if (a.meta.value("kind", "") != "ranker_model")
    throw DataError("RankerModel::load: not a ranker checkpoint");
  const auto& c = a.meta.at("config");
  RankerModel m;
  m.config.char_embedding_dim = c.at("char_embedding_dim").get<int>();
  m.config.char_kernel_widths = c.at("char_kernel_widths").get<std::vector<int>>();
  m.config.char_filters = c.at("char_filters").get<int>();
  m.config.word_embedding_dim = c.at("word_embedding_dim").get<int>();
  m.config.hidden_units = c.at("hidden_units").get<int>();
  m.config.margin = c.at("margin").get<double>();
  m.config.ngram_min = c.at("ngram_min").get<int>();
  m.config.ngram_max = c.at("ngram_max").get<int>();
  m.config.negatives_per_anchor = c.at("negatives_per_anchor").get<int>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.batch_size = c.at("batch_size").get<int>();
  m.config.epochs = c.at("epochs").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.word_vocab = Vocabulary::from_json(a.meta.at("vocabulary").dump());
  m.char_embedding = a.get("char_embedding");
  for (std::size_t l = 0; l < m.config.char_kernel_widths.size(); ++l) {
    CharConvLayer conv;
    conv.width = m.config.char_kernel_widths[l];
    conv.weights = a.get("char_conv" + std::to_string(l) + ".weights");
    conv.bias = a.get_vector("char_conv" + std::to_string(l) + ".bias");
    m.char_convs.push_back(std::move(conv));
  }
  m.word_embedding = a.get("word_embedding");
  m.forward_lstm = {a.get("lstm_fwd.wx"), a.get("lstm_fwd.wh"), a.get_vector("lstm_fwd.b")};
  m.backward_lstm = {a.get("lstm_bwd.wx"), a.get("lstm_bwd.wh"), a.get_vector("lstm_bwd.b")};
  return m;
}

}  // namespace medcoder
