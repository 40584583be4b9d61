#include "medcoder/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace medcoder {

namespace {

// AUC of a single ranking via the Mann-Whitney rank sum, ties counted half.
double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tie groups.
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double pos = 0, rank_sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      pos += 1.0;
      rank_sum += rank[k];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

}  // namespace

F1Result f1_scores(const IntMatrix& decisions, const IntMatrix& labels) {
  if (decisions.rows() != labels.rows() || decisions.cols() != labels.cols())
    throw DataError("f1_scores: decision/label shape mismatch");
  const Eigen::Index C = labels.cols();

  F1Result out;
  out.per_code.resize(static_cast<std::size_t>(C));
  long tp_all = 0, fp_all = 0, fn_all = 0;
  double macro_sum = 0.0;
  for (Eigen::Index j = 0; j < C; ++j) {
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index i = 0; i < labels.rows(); ++i) {
      const int d = decisions(i, j), y = labels(i, j);
      tp += (d == 1 && y == 1);
      fp += (d == 1 && y == 0);
      fn += (d == 0 && y == 1);
    }
    const long denom = 2 * tp + fp + fn;
    const double f1 = denom > 0 ? 2.0 * tp / static_cast<double>(denom) : 0.0;
    out.per_code[static_cast<std::size_t>(j)] = f1;
    macro_sum += f1;
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  out.macro = C > 0 ? macro_sum / static_cast<double>(C) : 0.0;
  const long denom_all = 2 * tp_all + fp_all + fn_all;
  out.micro = denom_all > 0 ? 2.0 * tp_all / static_cast<double>(denom_all) : 0.0;
  return out;
}

AucResult auc_scores(const Matrix& probabilities, const IntMatrix& labels) {
  if (probabilities.rows() != labels.rows() || probabilities.cols() != labels.cols())
    throw DataError("auc_scores: probability/label shape mismatch");
  const Eigen::Index N = labels.rows(), C = labels.cols();

  AucResult out;
  out.per_code.resize(static_cast<std::size_t>(C));
  double macro_sum = 0.0;
  int defined = 0;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  pooled_scores.reserve(static_cast<std::size_t>(N * C));
  pooled_labels.reserve(static_cast<std::size_t>(N * C));
  for (Eigen::Index j = 0; j < C; ++j) {
    std::vector<double> s(static_cast<std::size_t>(N));
    std::vector<int> y(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) {
      s[static_cast<std::size_t>(i)] = probabilities(i, j);
      y[static_cast<std::size_t>(i)] = labels(i, j);
      pooled_scores.push_back(probabilities(i, j));
      pooled_labels.push_back(labels(i, j));
    }
    const double auc = rank_auc(s, y);
    out.per_code[static_cast<std::size_t>(j)] = auc;
    if (!std::isnan(auc)) {
      macro_sum += auc;
      ++defined;
    }
  }
  if (defined == 0) throw DataError("auc_scores: no code has both classes");
  out.macro = macro_sum / defined;
  out.micro = rank_auc(pooled_scores, pooled_labels);
  return out;
}

MetricReport evaluate_all(const Matrix& probabilities, const IntMatrix& decisions,
                          const IntMatrix& labels) {
  MetricReport r;
  const F1Result f1 = f1_scores(decisions, labels);
  const AucResult auc = auc_scores(probabilities, labels);
  r.macro_f1 = f1.macro;
  r.micro_f1 = f1.micro;
  r.macro_auc = auc.macro;
  r.micro_auc = auc.micro;
  r.per_code_f1 = f1.per_code;
  r.per_code_auc = auc.per_code;
  r.positives_per_code.resize(static_cast<std::size_t>(labels.cols()));
  for (Eigen::Index j = 0; j < labels.cols(); ++j)
    r.positives_per_code[static_cast<std::size_t>(j)] = labels.col(j).sum();
  return r;
}

}  // namespace medcoder
