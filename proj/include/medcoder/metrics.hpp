#pragma once

#include "medcoder/types.hpp"

#include <vector>

namespace medcoder {

struct F1Result {
  double macro = 0.0;
  double micro = 0.0;
  std::vector<double> per_code;
};

struct AucResult {
  double macro = 0.0;
  double micro = 0.0;
  // NaN for codes where AUC is undefined (single-class); excluded from macro.
  std::vector<double> per_code;
};

struct MetricReport {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double macro_auc = 0.0;
  double micro_auc = 0.0;
  std::vector<double> per_code_f1;
  std::vector<double> per_code_auc;
  std::vector<long> positives_per_code;
};

// Per-code F1 = 2PR/(P+R), 0 when P+R = 0. Micro pools TP/FP/FN across codes;
// macro is the unweighted mean of per-code values.
F1Result f1_scores(const IntMatrix& decisions, const IntMatrix& labels);

// Rank-statistic AUC with ties counted half. Codes lacking both classes get
// NaN and are skipped from the macro average; micro ranks the pooled
// (probability, label) pairs of every code. Throws if no code has both classes.
AucResult auc_scores(const Matrix& probabilities, const IntMatrix& labels);

MetricReport evaluate_all(const Matrix& probabilities, const IntMatrix& decisions,
                          const IntMatrix& labels);

}  // namespace medcoder
