#include "medcoder/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace medcoder {

using json = nlohmann::ordered_json;

std::vector<RawToken> normalize_text(const std::string& raw) {
  std::vector<RawToken> out;
  const int n = static_cast<int>(raw.size());
  int i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(raw[i]);
    if (std::isdigit(c)) {
      int j = i;
      while (j < n && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
      out.push_back({"NUM", {i, j}});
      i = j;
    } else if (std::isalpha(c)) {
      int j = i;
      std::string tok;
      while (j < n && std::isalpha(static_cast<unsigned char>(raw[j]))) {
        tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw[j]))));
        ++j;
      }
      out.push_back({std::move(tok), {i, j}});
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& training_documents,
                            int min_frequency) {
  if (training_documents.empty())
    throw DataError("build_vocabulary: empty training corpus");

  std::unordered_map<std::string, long> counts;
  for (const auto& doc : training_documents)
    for (const auto& tok : normalize_text(doc)) ++counts[tok.text];

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, c] : counts)
    if (c >= min_frequency) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocabulary v;
  v.min_frequency = min_frequency;
  v.tokens = {"PAD", "UNK"};
  v.frequency = {0, 0};
  v.ids["PAD"] = Vocabulary::kPadId;
  v.ids["UNK"] = Vocabulary::kUnkId;
  for (const auto& [tok, c] : kept) {
    if (v.ids.count(tok)) continue;
    v.ids[tok] = static_cast<int>(v.tokens.size());
    v.tokens.push_back(tok);
    v.frequency.push_back(c);
  }
  return v;
}

TokenizedDocument tokenize(const std::string& raw_text, const Vocabulary& vocabulary) {
  TokenizedDocument doc;
  for (auto& tok : normalize_text(raw_text)) {
    doc.ids.push_back(vocabulary.lookup(tok.text));
    doc.spans.push_back(tok.span);
    doc.words.push_back(std::move(tok.text));
  }
  return doc;
}

std::string Vocabulary::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "vocabulary";
  j["min_frequency"] = min_frequency;
  json entries = json::array();
  for (int id = 2; id < size(); ++id) {
    entries.push_back({{"token", tokens[static_cast<std::size_t>(id)]},
                       {"id", id},
                       {"frequency", frequency[static_cast<std::size_t>(id)]}});
  }
  j["entries"] = std::move(entries);
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("kind", "") != "vocabulary")
    throw DataError("Vocabulary::from_json: not a vocabulary file");
  Vocabulary v;
  v.min_frequency = j.at("min_frequency").get<int>();
  v.tokens = {"PAD", "UNK"};
  v.frequency = {0, 0};
  v.ids["PAD"] = kPadId;
  v.ids["UNK"] = kUnkId;
  for (const auto& e : j.at("entries")) {
    const auto tok = e.at("token").get<std::string>();
    const int id = e.at("id").get<int>();
    if (id != static_cast<int>(v.tokens.size()))
      throw DataError("Vocabulary::from_json: non-dense id sequence");
    v.ids[tok] = id;
    v.tokens.push_back(tok);
    v.frequency.push_back(e.at("frequency").get<long>());
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("Vocabulary::save: cannot open " + path);
  f << to_json();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("Vocabulary::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void TfidfModel::fit(const std::vector<std::vector<std::string>>& documents) {
  const double n_docs = static_cast<double>(documents.size());
  idf_ = Vector::Zero(dim());
  Eigen::VectorXd df = Eigen::VectorXd::Zero(dim());
  for (const auto& doc : documents) {
    std::set<int> seen;
    for (const auto& tok : doc) {
      auto it = index_.find(tok);
      if (it != index_.end()) seen.insert(it->second);
    }
    for (int t : seen) df[t] += 1.0;
  }
  for (int t = 0; t < dim(); ++t)
    idf_[t] = std::log((1.0 + n_docs) / (1.0 + df[t])) + 1.0;
}

Vector TfidfModel::transform(const std::vector<std::string>& document_tokens) const {
  if (idf_.size() != dim()) throw ConfigError("TfidfModel: transform before fit");
  Vector tf = Vector::Zero(dim());
  for (const auto& tok : document_tokens) {
    auto it = index_.find(tok);
    if (it != index_.end()) tf[it->second] += 1.0;
  }
  Vector w = tf.cwiseProduct(idf_);
  const double norm = w.norm();
  if (norm > 0) w /= norm;
  return w;
}

std::string TfidfModel::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "tfidf";
  j["terms"] = terms_;
  std::vector<double> idf(idf_.data(), idf_.data() + idf_.size());
  j["idf"] = idf;
  return j.dump(2);
}

TfidfModel TfidfModel::from_json(const std::string& text) {
  const json j = json::parse(text);
  TfidfModel m(j.at("terms").get<std::vector<std::string>>());
  const auto idf = j.at("idf").get<std::vector<double>>();
  m.idf_ = Eigen::Map<const Vector>(idf.data(), static_cast<Eigen::Index>(idf.size()));
  return m;
}

std::vector<Vector> compute_tfidf(const std::vector<std::vector<std::string>>& documents,
                                  const std::vector<std::string>& term_list) {
  TfidfModel model(term_list);
  model.fit(documents);
  std::vector<Vector> out;
  out.reserve(documents.size());
  for (const auto& doc : documents) out.push_back(model.transform(doc));
  return out;
}

std::vector<std::string> extract_guideline_keywords(
    const std::vector<std::string>& guideline_texts, int top_k_per_code) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(guideline_texts.size());
  std::set<std::string> all_terms;
  for (const auto& text : guideline_texts) {
    std::vector<std::string> toks;
    for (auto& t : normalize_text(text)) toks.push_back(std::move(t.text));
    for (const auto& t : toks) all_terms.insert(t);
    docs.push_back(std::move(toks));
  }
  if (top_k_per_code <= 0 || all_terms.empty()) return {};

  TfidfModel model(std::vector<std::string>(all_terms.begin(), all_terms.end()));
  model.fit(docs);

  std::vector<std::string> out;
  std::set<std::string> in_out;
  for (const auto& doc : docs) {
    const Vector w = model.transform(doc);
    std::vector<int> order;
    for (int t = 0; t < model.dim(); ++t)
      if (w[t] > 0) order.push_back(t);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return w[a] != w[b] ? w[a] > w[b] : model.terms()[static_cast<std::size_t>(a)] <
                                              model.terms()[static_cast<std::size_t>(b)];
    });
    const int k = std::min<int>(top_k_per_code, static_cast<int>(order.size()));
    for (int r = 0; r < k; ++r) {
      const auto& term = model.terms()[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
      if (in_out.insert(term).second) out.push_back(term);
    }
  }
  return out;
}

}  // namespace medcoder
