#include "medcoder/pipeline.hpp"

#include "medcoder/interpret.hpp"
#include "medcoder/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace medcoder {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string slurp(const std::string& path, const std::string& what) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError(what + ": cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << content;
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "run_config";
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["corpus_dir"] = corpus_dir;
  j["generator_config_path"] = generator_config_path;
  j["split_ratios"] = split_ratios;
  j["text"] = {{"vocab_min_frequency", vocab_min_frequency},
               {"embedding_dim", text_embedding_dim},
               {"kernel_widths", text_kernel_widths},
               {"feature_maps", text_feature_maps},
               {"dropout", text_dropout},
               {"l2", text_l2},
               {"learning_rate", text_learning_rate},
               {"batch_size", text_batch_size},
               {"smoothing_alpha", smoothing_alpha},
               {"epochs", text_epochs},
               {"max_tokens", max_tokens},
               {"guideline_terms_per_code", guideline_terms_per_code}};
  j["ranker"] = {{"char_embedding_dim", ranker.char_embedding_dim},
                 {"char_kernel_widths", ranker.char_kernel_widths},
                 {"char_filters", ranker.char_filters},
                 {"word_embedding_dim", ranker.word_embedding_dim},
                 {"hidden_units", ranker.hidden_units},
                 {"margin", ranker.margin},
                 {"ngram_min", ranker.ngram_min},
                 {"ngram_max", ranker.ngram_max},
                 {"negatives_per_anchor", ranker.negatives_per_anchor},
                 {"learning_rate", ranker.learning_rate},
                 {"batch_size", ranker.batch_size},
                 {"epochs", ranker.epochs}};
  j["tabular"] = {{"med_min_frequency", med_min_frequency},
                  {"tree_max_depth", tree_max_depth},
                  {"tree_min_leaf_weight", tree_min_leaf_weight}};
  j["ensemble"] = {{"grid_step", grid_step},
                   {"tune_per_code_thresholds", tune_per_code_thresholds}};
  j["explain"] = {{"evidence_top_k", evidence_top_k},
                  {"surrogate_samples", surrogate_samples},
                  {"surrogate_sigma", surrogate_sigma},
                  {"surrogate_lambda", surrogate_lambda}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c;
  c.seed = j.value("seed", std::uint64_t{0});
  c.out_dir = j.value("out_dir", std::string("run"));
  c.corpus_dir = j.value("corpus_dir", std::string());
  c.generator_config_path = j.value("generator_config_path", std::string());
  if (j.contains("split_ratios")) {
    const auto r = j.at("split_ratios").get<std::vector<double>>();
    if (r.size() != 3) throw ConfigError("RunConfig: split_ratios must have 3 entries");
    c.split_ratios = {r[0], r[1], r[2]};
  }
  if (j.contains("text")) {
    const auto& t = j.at("text");
    c.vocab_min_frequency = t.value("vocab_min_frequency", c.vocab_min_frequency);
    c.text_embedding_dim = t.value("embedding_dim", c.text_embedding_dim);
    c.text_kernel_widths = t.value("kernel_widths", c.text_kernel_widths);
    c.text_feature_maps = t.value("feature_maps", c.text_feature_maps);
    c.text_dropout = t.value("dropout", c.text_dropout);
    c.text_l2 = t.value("l2", c.text_l2);
    c.text_learning_rate = t.value("learning_rate", c.text_learning_rate);
    c.text_batch_size = t.value("batch_size", c.text_batch_size);
    c.smoothing_alpha = t.value("smoothing_alpha", c.smoothing_alpha);
    c.text_epochs = t.value("epochs", c.text_epochs);
    c.max_tokens = t.value("max_tokens", c.max_tokens);
    c.guideline_terms_per_code =
        t.value("guideline_terms_per_code", c.guideline_terms_per_code);
  }
  if (j.contains("ranker")) {
    const auto& r = j.at("ranker");
    c.ranker.char_embedding_dim = r.value("char_embedding_dim", c.ranker.char_embedding_dim);
    c.ranker.char_kernel_widths = r.value("char_kernel_widths", c.ranker.char_kernel_widths);
    c.ranker.char_filters = r.value("char_filters", c.ranker.char_filters);
    c.ranker.word_embedding_dim = r.value("word_embedding_dim", c.ranker.word_embedding_dim);
    c.ranker.hidden_units = r.value("hidden_units", c.ranker.hidden_units);
    c.ranker.margin = r.value("margin", c.ranker.margin);
    c.ranker.ngram_min = r.value("ngram_min", c.ranker.ngram_min);
    c.ranker.ngram_max = r.value("ngram_max", c.ranker.ngram_max);
    c.ranker.negatives_per_anchor =
        r.value("negatives_per_anchor", c.ranker.negatives_per_anchor);
    c.ranker.learning_rate = r.value("learning_rate", c.ranker.learning_rate);
    c.ranker.batch_size = r.value("batch_size", c.ranker.batch_size);
    c.ranker.epochs = r.value("epochs", c.ranker.epochs);
  }
  if (j.contains("tabular")) {
    const auto& t = j.at("tabular");
    c.med_min_frequency = t.value("med_min_frequency", c.med_min_frequency);
    c.tree_max_depth = t.value("tree_max_depth", c.tree_max_depth);
    c.tree_min_leaf_weight = t.value("tree_min_leaf_weight", c.tree_min_leaf_weight);
  }
  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    c.grid_step = e.value("grid_step", c.grid_step);
    c.tune_per_code_thresholds =
        e.value("tune_per_code_thresholds", c.tune_per_code_thresholds);
  }
  if (j.contains("explain")) {
    const auto& e = j.at("explain");
    c.evidence_top_k = e.value("evidence_top_k", c.evidence_top_k);
    c.surrogate_samples = e.value("surrogate_samples", c.surrogate_samples);
    c.surrogate_sigma = e.value("surrogate_sigma", c.surrogate_sigma);
    c.surrogate_lambda = e.value("surrogate_lambda", c.surrogate_lambda);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_json(slurp(path, "RunConfig::load"));
}

void RunConfig::save(const std::string& path) const { spit(path, to_json()); }

std::string concatenated_notes(const AdmissionRecord& record) {
  std::string out;
  for (const auto& n : record.notes) {
    if (!out.empty()) out += '\n';
    out += n;
  }
  return out;
}

std::vector<const AdmissionRecord*> select_split(
    const std::vector<AdmissionRecord>& records, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const AdmissionRecord*> by_id;
  for (const auto& r : records) by_id[r.admission_id] = &r;
  std::vector<const AdmissionRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw MissingDependencyError("split references unknown admission " + id);
    out.push_back(it->second);
  }
  return out;
}

LoadedCorpus load_corpus_and_split(const RunConfig& config) {
  LoadedCorpus lc;
  lc.catalog = CodeCatalog::load(config.path("catalog.json"));
  lc.records = load_tables(config.corpus_directory(), lc.catalog);
  lc.split = DatasetSplit::from_json(slurp(config.path("split.json"), "split"));
  return lc;
}

void cmd_gen_synthetic(const RunConfig& config) {
  const GeneratorConfig gen = config.generator_config_path.empty()
                                  ? default_synthetic_config()
                                  : GeneratorConfig::load(config.generator_config_path);
  const CodeCatalog catalog = gen.catalog();
  const auto records = generate_synthetic(gen, config.seed);
  fs::create_directories(config.out_dir);
  write_tables(config.corpus_directory(), catalog, records);
  catalog.save(config.path("catalog.json"));
  // The planted mapping doubles as the answer key for interpretability tests.
  spit(config.path("planted.json"), gen.to_json());
  for (const auto& c : gen.codes) {
    std::string text = c.description + ".\n";
    for (const auto& s : c.synonyms) text += s + ".\n";
    // Repeat the hallmark phrase so it tops the per-code tf-idf ranking.
    for (int r = 0; r < 4; ++r) text += c.keyword + ".\n";
    spit(config.path("guidelines/" + c.code + ".txt"), text);
  }
}

IngestSummary cmd_ingest(const RunConfig& config) {
  const CodeCatalog catalog = CodeCatalog::load(config.path("catalog.json"));
  IngestSummary summary;
  const auto records = load_tables(config.corpus_directory(), catalog, &summary);
  const DatasetSplit split = split_by_patient(records, config.split_ratios, config.seed);
  spit(config.path("split.json"), split.to_json());
  json j;
  j["schema_version"] = 1;
  j["kind"] = "ingest_summary";
  j["admissions_loaded"] = summary.admissions_loaded;
  j["admissions_dropped"] = summary.admissions_dropped;
  j["admission_rows"] = summary.admission_rows;
  j["orphan_rows_dropped"] = summary.orphan_rows_dropped;
  j["malformed_rows"] = summary.malformed_rows;
  j["rows_per_table"] = summary.rows_per_table;
  spit(config.path("ingest_summary.json"), j.dump(2));
  return summary;
}

namespace {

TextModelConfig make_text_config(const RunConfig& config, int vocab_size, int num_codes,
                                 int tfidf_dim) {
  TextModelConfig t;
  t.vocab_size = vocab_size;
  t.num_codes = num_codes;
  t.embedding_dim = config.text_embedding_dim;
  t.kernel_widths = config.text_kernel_widths;
  t.feature_maps = config.text_feature_maps;
  t.dropout_rate = config.text_dropout;
  t.l2_coefficient = config.text_l2;
  t.learning_rate = config.text_learning_rate;
  t.batch_size = config.text_batch_size;
  t.smoothing_alpha = config.smoothing_alpha;
  t.tfidf_side_channel = tfidf_dim > 0;
  t.tfidf_dim = tfidf_dim;
  t.epochs = config.text_epochs;
  t.max_tokens = config.max_tokens;
  t.seed = config.seed;
  return t;
}

std::vector<std::string> document_words(const std::string& text) {
  std::vector<std::string> words;
  for (auto& t : normalize_text(text)) words.push_back(std::move(t.text));
  return words;
}

TextTrainExample make_example(const AdmissionRecord& rec, const Vocabulary& vocab,
                              const TfidfModel* tfidf) {
  TextTrainExample ex;
  const std::string text = concatenated_notes(rec);
  const TokenizedDocument doc = tokenize(text, vocab);
  ex.token_ids = doc.ids;
  if (ex.token_ids.empty()) ex.token_ids.push_back(Vocabulary::kUnkId);
  if (tfidf) ex.tfidf = tfidf->transform(doc.words);
  ex.labels = rec.labels;
  return ex;
}

struct PredictorBundle {
  std::optional<TextModel> text;
  Vocabulary vocab;
  std::optional<TfidfModel> tfidf;
  std::optional<RankerModel> ranker;
  std::vector<Vector> code_embeddings;  // cached per ranker checkpoint
  std::optional<TreeEnsembleModel> tabular;

  static PredictorBundle open(const RunConfig& config, const CodeCatalog& catalog,
                              bool require_text = true) {
    PredictorBundle b;
    const std::string text_path = config.path("text_model.bin");
    if (fs::exists(text_path)) {
      b.text = TextModel::load(text_path);
      b.vocab = Vocabulary::load(config.path("vocabulary.json"));
      if (b.text->config.tfidf_side_channel)
        b.tfidf = TfidfModel::from_json(slurp(config.path("tfidf.json"), "tfidf"));
    } else if (require_text) {
      throw MissingDependencyError("text model checkpoint missing: " + text_path);
    }
    const std::string ranker_path = config.path("ranker_model.bin");
    if (fs::exists(ranker_path)) {
      b.ranker = RankerModel::load(ranker_path);
      for (const auto& c : catalog.codes)
        b.code_embeddings.push_back(encode(*b.ranker, c.description));
    }
    const std::string tabular_path = config.path("tabular_model.json");
    if (fs::exists(tabular_path)) b.tabular = TreeEnsembleModel::load(tabular_path);
    return b;
  }

  Vector ranker_scores(const AdmissionRecord& rec) const {
    const int C = static_cast<int>(code_embeddings.size());
    Vector mean = Vector::Zero(C);
    for (const auto& phrase : rec.diagnosis_phrases) {
      const Vector e = encode(*ranker, phrase);
      Vector dist(C);
      for (int j = 0; j < C; ++j) dist[j] = (e - code_embeddings[static_cast<std::size_t>(j)]).norm();
      const double lo = dist.minCoeff(), hi = dist.maxCoeff();
      Vector s(C);
      if (hi - lo < 1e-12) s.setConstant(0.5);
      else
        for (int j = 0; j < C; ++j) s[j] = 1.0 - (dist[j] - lo) / (hi - lo);
      mean += s;
    }
    return mean / static_cast<double>(rec.diagnosis_phrases.size());
  }

  std::vector<ModalityPrediction> predictions(const AdmissionRecord& rec) const {
    std::vector<ModalityPrediction> out;
    {
      ModalityPrediction p;
      p.predictor_id = "text";
      p.available = text.has_value();
      if (p.available) {
        const TextTrainExample ex =
            make_example(rec, vocab, tfidf ? &*tfidf : nullptr);
        const Vector* tf = text->config.tfidf_side_channel ? &ex.tfidf : nullptr;
        p.probabilities = text_forward(*text, ex.token_ids, tf);
      }
      out.push_back(std::move(p));
    }
    {
      ModalityPrediction p;
      p.predictor_id = "ranker";
      p.available = ranker.has_value() && !rec.diagnosis_phrases.empty();
      if (p.available) p.probabilities = ranker_scores(rec);
      out.push_back(std::move(p));
    }
    {
      ModalityPrediction p;
      p.predictor_id = "tabular";
      p.available = tabular.has_value();
      if (p.available) p.probabilities = predict_tabular(*tabular, vectorize(rec, tabular->schema));
      out.push_back(std::move(p));
    }
    return out;
  }
};

}  // namespace

void cmd_train_text(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto train = select_split(lc.records, lc.split.train);
  const auto val = select_split(lc.records, lc.split.validation);

  std::vector<std::string> train_docs;
  for (const auto* r : train) train_docs.push_back(concatenated_notes(*r));
  const Vocabulary vocab = build_vocabulary(train_docs, config.vocab_min_frequency);
  vocab.save(config.path("vocabulary.json"));

  // TF-IDF side channel from the per-code guideline fixtures, when present.
  std::optional<TfidfModel> tfidf;
  if (config.guideline_terms_per_code > 0) {
    std::vector<std::string> guideline_texts;
    bool any = false;
    for (const auto& c : lc.catalog.codes) {
      const std::string path = config.path("guidelines/" + c.code + ".txt");
      if (fs::exists(path)) {
        guideline_texts.push_back(slurp(path, "guideline"));
        any = true;
      } else {
        std::cerr << "train-text: no guideline for " << c.code << "; skipped\n";
        guideline_texts.emplace_back();
      }
    }
    if (any) {
      const auto terms =
          extract_guideline_keywords(guideline_texts, config.guideline_terms_per_code);
      if (!terms.empty()) {
        std::string listing;
        for (const auto& t : terms) listing += t + "\n";
        spit(config.path("guideline_terms.txt"), listing);
        TfidfModel model(terms);
        std::vector<std::vector<std::string>> token_docs;
        for (const auto& d : train_docs) token_docs.push_back(document_words(d));
        model.fit(token_docs);
        spit(config.path("tfidf.json"), model.to_json());
        tfidf = std::move(model);
      }
    }
  }

  const TextModelConfig text_config = make_text_config(
      config, vocab.size(), lc.catalog.size(), tfidf ? tfidf->dim() : 0);
  std::vector<TextTrainExample> train_ex, val_ex;
  for (const auto* r : train) train_ex.push_back(make_example(*r, vocab, tfidf ? &*tfidf : nullptr));
  for (const auto* r : val) val_ex.push_back(make_example(*r, vocab, tfidf ? &*tfidf : nullptr));

  const TextTrainResult result = train_text(text_config, train_ex, val_ex);
  result.model.save(config.path("text_model.bin"));
  std::string log;
  for (const auto& e : result.log) {
    json line = {{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"validation_micro_f1", e.validation_micro_f1},
                 {"mean_epsilon", e.mean_epsilon}};
    log += line.dump() + "\n";
  }
  spit(config.path("text_training_log.jsonl"), log);
}

void cmd_train_ranker(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto train = select_split(lc.records, lc.split.train);

  // Hold the last synonym of each code out of training as ranking validation.
  CodeCatalog train_catalog = lc.catalog;
  std::vector<std::pair<std::string, int>> validation;
  for (int j = 0; j < train_catalog.size(); ++j) {
    auto& syns = train_catalog.codes[static_cast<std::size_t>(j)].synonyms;
    if (syns.size() >= 2) {
      validation.emplace_back(syns.back(), j);
      syns.pop_back();
    }
  }

  std::vector<std::string> corpus_texts;
  for (const auto* r : train) {
    for (const auto& d : r->diagnosis_phrases) corpus_texts.push_back(d);
    if (corpus_texts.size() >= 500) break;
  }
  RankerConfig rc = config.ranker;
  rc.seed = config.seed;
  const SynonymCorpus corpus = mine_negatives(train_catalog, corpus_texts, rc);
  corpus.save(config.path("synonym_corpus.json"));

  const RankerTrainResult result = train_ranker(rc, corpus, validation);
  result.model.save(config.path("ranker_model.bin"));
}

void cmd_train_tabular(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto train = select_split(lc.records, lc.split.train);
  std::vector<AdmissionRecord> train_records;
  for (const auto* r : train) train_records.push_back(*r);

  const FeatureSchema schema =
      fit_schema(train_records, default_chart_ranges(), config.med_min_frequency);
  std::vector<BinaryFeatureVector> X;
  IntMatrix Y(static_cast<Eigen::Index>(train_records.size()), lc.catalog.size());
  for (std::size_t i = 0; i < train_records.size(); ++i) {
    X.push_back(vectorize(train_records[i], schema));
    Y.row(static_cast<Eigen::Index>(i)) = train_records[i].labels.transpose();
  }
  TreeFitOptions opt;
  opt.max_depth = config.tree_max_depth;
  opt.min_leaf_weight = config.tree_min_leaf_weight;
  const TreeEnsembleModel model = fit_trees(X, Y, schema, opt);
  model.save(config.path("tabular_model.json"));
}

void cmd_tune_ensemble(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto val = select_split(lc.records, lc.split.validation);
  const PredictorBundle bundle = PredictorBundle::open(config, lc.catalog);

  std::vector<std::vector<ModalityPrediction>> val_preds;
  IntMatrix val_labels(static_cast<Eigen::Index>(val.size()), lc.catalog.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    val_preds.push_back(bundle.predictions(*val[i]));
    val_labels.row(static_cast<Eigen::Index>(i)) = val[i]->labels.transpose();
  }

  const std::vector<std::string> ids = {"text", "ranker", "tabular"};
  const EnsembleWeights weights =
      tune_weights(val_preds, val_labels, ids, /*fallback_index=*/0, config.grid_step);
  weights.save(config.path("ensemble_weights.json"));

  Vector thresholds = Vector::Constant(lc.catalog.size(), 0.5);
  if (config.tune_per_code_thresholds) {
    Matrix fused(static_cast<Eigen::Index>(val.size()), lc.catalog.size());
    for (std::size_t i = 0; i < val.size(); ++i)
      fused.row(static_cast<Eigen::Index>(i)) = fuse(val_preds[i], weights).transpose();
    thresholds = tune_thresholds(fused, val_labels);
  }
  json t;
  t["schema_version"] = 1;
  t["kind"] = "thresholds";
  std::vector<double> tv(thresholds.data(), thresholds.data() + thresholds.size());
  t["thresholds"] = tv;
  spit(config.path("thresholds.json"), t.dump(2));
}

void cmd_predict(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto test = select_split(lc.records, lc.split.test);
  const EnsembleWeights weights =
      EnsembleWeights::load(config.path("ensemble_weights.json"));
  const PredictorBundle bundle = PredictorBundle::open(config, lc.catalog);
  if (!bundle.ranker)
    std::cerr << "predict: ranker checkpoint absent; its weight goes to the text model\n";
  if (!bundle.tabular)
    std::cerr << "predict: tabular checkpoint absent; its weight goes to the text model\n";

  Vector thresholds = Vector::Constant(lc.catalog.size(), 0.5);
  if (fs::exists(config.path("thresholds.json"))) {
    const json t = json::parse(slurp(config.path("thresholds.json"), "thresholds"));
    const auto tv = t.at("thresholds").get<std::vector<double>>();
    thresholds = Eigen::Map<const Vector>(tv.data(), static_cast<Eigen::Index>(tv.size()));
  }

  std::string lines;
  for (const auto* r : test) {
    const auto preds = bundle.predictions(*r);
    const Vector fused = fuse(preds, weights);
    const IntVector decisions = decide(fused, thresholds);
    json line;
    line["admission_id"] = r->admission_id;
    std::vector<double> probs(fused.data(), fused.data() + fused.size());
    line["probabilities"] = probs;
    std::vector<int> dec(decisions.data(), decisions.data() + decisions.size());
    line["decisions"] = dec;
    json contributing = json::array();
    for (const auto& p : preds)
      if (p.available) contributing.push_back(p.predictor_id);
    line["contributing_predictors"] = std::move(contributing);
    lines += line.dump() + "\n";
  }
  spit(config.path("predictions.jsonl"), lines);
}

void cmd_explain(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto test = select_split(lc.records, lc.split.test);
  const PredictorBundle bundle = PredictorBundle::open(config, lc.catalog);
  const std::string pred_text = slurp(config.path("predictions.jsonl"), "predictions");

  std::unordered_map<std::string, std::vector<int>> decided;
  {
    std::istringstream in(pred_text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json p = json::parse(line);
      const auto dec = p.at("decisions").get<std::vector<int>>();
      std::vector<int> codes;
      for (std::size_t j = 0; j < dec.size(); ++j)
        if (dec[j] == 1) codes.push_back(static_cast<int>(j));
      decided[p.at("admission_id").get<std::string>()] = std::move(codes);
    }
  }

  std::string lines;
  std::uint64_t call = 0;
  for (const auto* r : test) {
    auto it = decided.find(r->admission_id);
    if (it == decided.end()) continue;
    const std::string note_text = concatenated_notes(*r);
    const TokenizedDocument doc = tokenize(note_text, bundle.vocab);
    TextTrainExample ex = make_example(*r, bundle.vocab, bundle.tfidf ? &*bundle.tfidf : nullptr);
    const BinaryFeatureVector bits =
        bundle.tabular ? vectorize(*r, bundle.tabular->schema) : BinaryFeatureVector();

    for (int code : it->second) {
      json entry;
      entry["admission_id"] = r->admission_id;
      entry["code"] = lc.catalog.codes[static_cast<std::size_t>(code)].code;

      json phrases = json::array();
      if (!doc.ids.empty()) {
        const Vector* tf =
            bundle.text->config.tfidf_side_channel ? &ex.tfidf : nullptr;
        std::vector<int> ids = doc.ids;
        if (static_cast<int>(ids.size()) > bundle.text->config.max_tokens)
          ids.resize(static_cast<std::size_t>(bundle.text->config.max_tokens));
        const auto scores = word_influence(*bundle.text, ids, tf, code);
        std::vector<Span> spans(doc.spans.begin(), doc.spans.begin() + static_cast<long>(scores.size()));
        std::vector<std::string> words(doc.words.begin(), doc.words.begin() + static_cast<long>(scores.size()));
        for (const auto& p : assemble_phrases(scores, spans, words, config.evidence_top_k))
          phrases.push_back({{"phrase", p.phrase},
                             {"begin", p.span.begin},
                             {"end", p.span.end},
                             {"score", p.score},
                             {"rank", p.rank}});
      }
      entry["phrases"] = std::move(phrases);

      json features = json::array();
      if (bundle.tabular) {
        SurrogateConfig sc;
        sc.sample_count = config.surrogate_samples;
        sc.kernel_sigma = config.surrogate_sigma;
        sc.ridge_lambda = config.surrogate_lambda;
        sc.top_k = config.evidence_top_k;
        sc.seed = config.seed + (++call);
        const auto& tree = bundle.tabular->trees[static_cast<std::size_t>(code)];
        const auto predict_fn = [&tree](const BinaryFeatureVector& x) {
          return tree.predict(x);
        };
        for (const auto& fe :
             explain_tabular(predict_fn, bits, bundle.tabular->schema, sc))
          features.push_back({{"feature_id", fe.feature_id},
                              {"table", fe.table},
                              {"weight", fe.weight},
                              {"rank", fe.rank}});
      }
      entry["features"] = std::move(features);
      lines += entry.dump() + "\n";
    }
  }
  spit(config.path("evidence.jsonl"), lines);
}

MetricReport cmd_evaluate(const RunConfig& config) {
  const LoadedCorpus lc = load_corpus_and_split(config);
  const auto test = select_split(lc.records, lc.split.test);
  const std::string pred_text = slurp(config.path("predictions.jsonl"), "predictions");

  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<int>>> preds;
  {
    std::istringstream in(pred_text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json p = json::parse(line);
      preds[p.at("admission_id").get<std::string>()] = {
          p.at("probabilities").get<std::vector<double>>(),
          p.at("decisions").get<std::vector<int>>()};
    }
  }

  const int C = lc.catalog.size();
  Matrix probs(static_cast<Eigen::Index>(test.size()), C);
  IntMatrix decisions(static_cast<Eigen::Index>(test.size()), C);
  IntMatrix labels(static_cast<Eigen::Index>(test.size()), C);
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto it = preds.find(test[i]->admission_id);
    if (it == preds.end())
      throw MissingDependencyError("evaluate: no prediction for " + test[i]->admission_id);
    if (static_cast<int>(it->second.first.size()) != C)
      throw MissingDependencyError(
          "evaluate: prediction width does not match catalog " + config.path("catalog.json"));
    for (int j = 0; j < C; ++j) {
      probs(static_cast<Eigen::Index>(i), j) = it->second.first[static_cast<std::size_t>(j)];
      decisions(static_cast<Eigen::Index>(i), j) = it->second.second[static_cast<std::size_t>(j)];
      labels(static_cast<Eigen::Index>(i), j) = test[i]->labels[j];
    }
  }

  const MetricReport report = evaluate_all(probs, decisions, labels);

  // Per-code rows ordered by training sample size, descending.
  std::vector<long> train_positives(static_cast<std::size_t>(C), 0);
  for (const auto* r : select_split(lc.records, lc.split.train))
    for (int j = 0; j < C; ++j) train_positives[static_cast<std::size_t>(j)] += r->labels[j];
  std::vector<int> order(static_cast<std::size_t>(C));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return train_positives[static_cast<std::size_t>(a)] >
           train_positives[static_cast<std::size_t>(b)];
  });

  json j;
  j["schema_version"] = 1;
  j["kind"] = "metric_report";
  j["macro_f1"] = report.macro_f1;
  j["micro_f1"] = report.micro_f1;
  j["macro_auc"] = report.macro_auc;
  j["micro_auc"] = report.micro_auc;
  json per_code = json::array();
  for (int idx : order) {
    const double auc = report.per_code_auc[static_cast<std::size_t>(idx)];
    per_code.push_back(
        {{"code", lc.catalog.codes[static_cast<std::size_t>(idx)].code},
         {"train_positives", train_positives[static_cast<std::size_t>(idx)]},
         {"test_positives", report.positives_per_code[static_cast<std::size_t>(idx)]},
         {"f1", report.per_code_f1[static_cast<std::size_t>(idx)]},
         {"auc", std::isnan(auc) ? json() : json(auc)}});
  }
  j["per_code"] = std::move(per_code);
  spit(config.path("metrics.json"), j.dump(2));
  return report;
}

void cmd_report(const RunConfig& config) {
  const json j = json::parse(slurp(config.path("metrics.json"), "metrics"));
  std::ostringstream out;
  out << "Code classification report\n";
  out << "==========================\n";
  out.precision(4);
  out << std::fixed;
  out << "macro-F1  " << j.at("macro_f1").get<double>() << "\n";
  out << "micro-F1  " << j.at("micro_f1").get<double>() << "\n";
  out << "macro-AUC " << j.at("macro_auc").get<double>() << "\n";
  out << "micro-AUC " << j.at("micro_auc").get<double>() << "\n\n";
  out << "code        train+  test+      F1     AUC\n";
  for (const auto& row : j.at("per_code")) {
    char buf[160];
    const auto& aucj = row.at("auc");
    if (aucj.is_null())
      std::snprintf(buf, sizeof(buf), "%-10s %7ld %6ld  %6.4f     n/a\n",
                    row.at("code").get<std::string>().c_str(),
                    row.at("train_positives").get<long>(),
                    row.at("test_positives").get<long>(), row.at("f1").get<double>());
    else
      std::snprintf(buf, sizeof(buf), "%-10s %7ld %6ld  %6.4f  %6.4f\n",
                    row.at("code").get<std::string>().c_str(),
                    row.at("train_positives").get<long>(),
                    row.at("test_positives").get<long>(), row.at("f1").get<double>(),
                    aucj.get<double>());
    out << buf;
  }
  spit(config.path("report.txt"), out.str());
}

int run_pipeline(const RunConfig& config, const std::string& command) {
  try {
    if (command == "gen-synthetic") cmd_gen_synthetic(config);
    else if (command == "ingest") cmd_ingest(config);
    else if (command == "train-text") cmd_train_text(config);
    else if (command == "train-ranker") cmd_train_ranker(config);
    else if (command == "train-tabular") cmd_train_tabular(config);
    else if (command == "tune-ensemble") cmd_tune_ensemble(config);
    else if (command == "predict") cmd_predict(config);
    else if (command == "explain") cmd_explain(config);
    else if (command == "evaluate") cmd_evaluate(config);
    else if (command == "report") cmd_report(config);
    else {
      std::cerr << "unknown command: " << command << "\n";
      return 2;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingDependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

}  // namespace medcoder
