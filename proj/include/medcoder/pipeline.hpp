#pragma once

#include "medcoder/corpus.hpp"
#include "medcoder/ensemble.hpp"
#include "medcoder/metrics.hpp"
#include "medcoder/ranker.hpp"
#include "medcoder/tabular.hpp"
#include "medcoder/textcnn.hpp"
#include "medcoder/types.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace medcoder {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string corpus_dir;              // defaults to <out_dir>/corpus
  std::string generator_config_path;   // empty -> built-in five-code config
  std::array<double, 3> split_ratios = {0.7, 0.1, 0.2};

  // text model
  int vocab_min_frequency = 10;
  int text_embedding_dim = 256;
  std::vector<int> text_kernel_widths = {2, 3, 4};
  int text_feature_maps = 128;
  double text_dropout = 0.1;
  double text_l2 = 1e-4;
  double text_learning_rate = 1e-3;
  int text_batch_size = 32;
  double smoothing_alpha = 0.3;
  int text_epochs = 10;
  int max_tokens = 2500;
  int guideline_terms_per_code = 10;  // 0 disables the TF-IDF side channel

  // ranker
  RankerConfig ranker;

  // tabular
  int med_min_frequency = 50;
  int tree_max_depth = 12;
  double tree_min_leaf_weight = 5.0;

  // ensemble / reporting
  double grid_step = 0.05;
  bool tune_per_code_thresholds = false;

  // interpretability
  int evidence_top_k = 5;
  int surrogate_samples = 1000;
  double surrogate_sigma = 0.25;
  double surrogate_lambda = 1.0;

  std::string corpus_directory() const {
    return corpus_dir.empty() ? out_dir + "/corpus" : corpus_dir;
  }
  std::string path(const std::string& artifact) const { return out_dir + "/" + artifact; }

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// Pipeline stages. Each reads and writes only artifacts under the run config's
// declared paths; missing upstream artifacts raise MissingDependencyError.
void cmd_gen_synthetic(const RunConfig& config);
IngestSummary cmd_ingest(const RunConfig& config);
void cmd_train_text(const RunConfig& config);
void cmd_train_ranker(const RunConfig& config);
void cmd_train_tabular(const RunConfig& config);
void cmd_tune_ensemble(const RunConfig& config);
void cmd_predict(const RunConfig& config);
void cmd_explain(const RunConfig& config);
MetricReport cmd_evaluate(const RunConfig& config);
void cmd_report(const RunConfig& config);

// Dispatch by command name; returns a process exit status (0 ok, 2 usage,
// 3 missing dependency, 4 data error).
int run_pipeline(const RunConfig& config, const std::string& command);

// Shared helpers used by stages and tests.
std::string concatenated_notes(const AdmissionRecord& record);
std::vector<const AdmissionRecord*> select_split(
    const std::vector<AdmissionRecord>& records, const std::vector<std::string>& ids);

struct LoadedCorpus {
  CodeCatalog catalog;
  std::vector<AdmissionRecord> records;
  DatasetSplit split;
};
LoadedCorpus load_corpus_and_split(const RunConfig& config);

}  // namespace medcoder
