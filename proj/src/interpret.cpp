#include "medcoder/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

namespace medcoder {

void SurrogateConfig::validate() const {
  if (sample_count < 10) throw ConfigError("SurrogateConfig: sample_count must be >= 10");
  if (kernel_sigma <= 0.0) throw ConfigError("SurrogateConfig: sigma must be > 0");
  if (ridge_lambda < 0.0) throw ConfigError("SurrogateConfig: lambda must be >= 0");
}

std::vector<double> word_influence(const TextModel& model,
                                   const std::vector<int>& token_ids,
                                   const Vector* tfidf, int target_code) {
  const auto& cfg = model.config;
  if (target_code < 0 || target_code >= cfg.num_codes)
    throw ConfigError("word_influence: target code out of range");

  TextForwardCache cache;
  text_forward(model, token_ids, tfidf, false, nullptr, &cache);

  std::vector<double> scores(static_cast<std::size_t>(cache.real_length), 0.0);
  int offset = 0;
  for (std::size_t l = 0; l < model.convs.size(); ++l) {
    const auto& conv = model.convs[l];
    const auto& cc = cache.convs[l];
    const int D = cfg.embedding_dim;
    for (int f = 0; f < cfg.feature_maps; ++f) {
      const int tau = cc.argmax[static_cast<std::size_t>(f)];
      // Only the pool-winning window carries paths, and ReLU must pass.
      if (cc.preact(f, tau) <= 0.0) continue;
      const double edge_out = model.fc_weights(target_code, offset + f);
      if (edge_out == 0.0) continue;
      for (int u = 0; u < conv.width; ++u) {
        const int t = tau + u;
        if (t >= cache.real_length) continue;  // PAD positions attribute nowhere
        const double contrib =
            cache.inputs.row(t).dot(conv.weights.row(f).segment(u * D, D));
        scores[static_cast<std::size_t>(t)] += contrib * edge_out;
      }
    }
    offset += cfg.feature_maps;
  }
  return scores;
}

std::vector<PhraseEvidence> assemble_phrases(const std::vector<double>& word_scores,
                                             const std::vector<Span>& source_spans,
                                             const std::vector<std::string>& words,
                                             int top_k) {
  if (word_scores.size() != source_spans.size() || word_scores.size() != words.size())
    throw DataError("assemble_phrases: score/span/word length mismatch");

  std::vector<PhraseEvidence> phrases;
  std::size_t i = 0;
  const std::size_t n = word_scores.size();
  while (i < n) {
    if (word_scores[i] == 0.0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    double best = word_scores[i];
    while (j + 1 < n && word_scores[j + 1] != 0.0) {
      ++j;
      best = std::max(best, word_scores[j]);
    }
    PhraseEvidence p;
    p.span = {source_spans[i].begin, source_spans[j].end};
    p.score = best;
    for (std::size_t k = i; k <= j; ++k) {
      if (k > i) p.phrase += ' ';
      p.phrase += words[k];
    }
    phrases.push_back(std::move(p));
    i = j + 1;
  }

  std::stable_sort(phrases.begin(), phrases.end(),
                   [](const PhraseEvidence& a, const PhraseEvidence& b) {
                     return a.score > b.score;
                   });
  if (top_k >= 0 && static_cast<int>(phrases.size()) > top_k)
    phrases.resize(static_cast<std::size_t>(top_k));
  for (std::size_t r = 0; r < phrases.size(); ++r)
    phrases[r].rank = static_cast<int>(r) + 1;
  return phrases;
}

std::vector<FeatureEvidence> explain_tabular(const TabularPredictFn& predict,
                                             const BinaryFeatureVector& instance,
                                             const FeatureSchema& schema,
                                             const SurrogateConfig& config) {
  config.validate();
  if (instance.size() != schema.width())
    throw DataError("explain_tabular: instance width mismatch");

  std::vector<int> active;
  for (int f = 0; f < instance.size(); ++f)
    if (instance[f] == 1) active.push_back(f);
  if (active.empty()) {
    std::cerr << "explain_tabular: instance has no active bits; no evidence\n";
    return {};
  }
  const int d = static_cast<int>(active.size());
  const int S = config.sample_count;

  Rng rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix Z(S, d + 1);  // indicator per active bit + intercept
  Vector y(S), w(S);
  BinaryFeatureVector perturbed = instance;
  for (int s = 0; s < S; ++s) {
    int hamming = 0;
    perturbed = instance;
    for (int k = 0; k < d; ++k) {
      const bool keep = unif(rng) < 0.5;
      Z(s, k) = keep ? 1.0 : 0.0;
      if (!keep) {
        perturbed[active[static_cast<std::size_t>(k)]] = 0;
        ++hamming;
      }
    }
    Z(s, d) = 1.0;
    y[s] = predict(perturbed);
    const double z = static_cast<double>(hamming) / static_cast<double>(d);
    w[s] = std::exp(-(z * z) / (config.kernel_sigma * config.kernel_sigma));
  }

  // Weighted ridge; intercept unpenalized.
  Matrix A = Z.transpose() * w.asDiagonal() * Z;
  for (int k = 0; k < d; ++k) A(k, k) += config.ridge_lambda;
  const Vector rhs = Z.transpose() * (w.asDiagonal() * y);
  const Vector beta = A.ldlt().solve(rhs);

  std::vector<int> order(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) order[static_cast<std::size_t>(k)] = k;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double wa = std::abs(beta[a]), wb = std::abs(beta[b]);
    return wa != wb ? wa > wb : active[static_cast<std::size_t>(a)] < active[static_cast<std::size_t>(b)];
  });

  std::vector<FeatureEvidence> out;
  const int k_out = std::min(config.top_k, d);
  for (int r = 0; r < k_out; ++r) {
    const int k = order[static_cast<std::size_t>(r)];
    FeatureEvidence e;
    e.feature_index = active[static_cast<std::size_t>(k)];
    e.feature_id = schema.feature_name(e.feature_index);
    e.table = schema.block_of(e.feature_index);
    e.weight = beta[k];
    e.rank = r + 1;
    out.push_back(std::move(e));
  }
  return out;
}

double jaccard_ids(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;  // identity of absence
  std::size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

double token_overlap_ratio(const std::string& a, const std::string& b) {
  std::set<std::string> ta, tb;
  for (const auto& t : normalize_text(a)) ta.insert(t.text);
  for (const auto& t : normalize_text(b)) tb.insert(t.text);
  if (ta.empty() || tb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& x : ta) inter += tb.count(x);
  return static_cast<double>(inter) / static_cast<double>(std::min(ta.size(), tb.size()));
}

double jaccard_text(const std::vector<std::string>& a, const std::vector<std::string>& b,
                    double overlap_threshold) {
  if (overlap_threshold <= 0.0 || overlap_threshold > 1.0)
    throw ConfigError("jaccard_text: threshold must lie in (0,1]");
  if (a.empty() && b.empty()) return 1.0;

  struct Pair {
    double ratio;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double r = token_overlap_ratio(a[i], b[j]);
      if (r >= overlap_threshold) pairs.push_back({r, i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.ratio != y.ratio) return x.ratio > y.ratio;
    if (x.i != y.i) return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
  std::size_t matched = 0;
  for (const auto& p : pairs) {
    if (used_a[p.i] || used_b[p.j]) continue;
    used_a[p.i] = used_b[p.j] = true;
    ++matched;
  }
  return static_cast<double>(matched) /
         static_cast<double>(a.size() + b.size() - matched);
}

}  // namespace medcoder
