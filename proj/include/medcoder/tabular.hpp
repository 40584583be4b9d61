#pragma once

#include "medcoder/corpus.hpp"
#include "medcoder/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace medcoder {

struct ChartRange {
  double low = 0.0;
  double high = 0.0;
};

// heart rate 60-100, systolic 90-120, diastolic 60-80, BMI 18.5-25
std::map<std::string, ChartRange> default_chart_ranges();

struct FeatureSchema {
  std::vector<std::string> lab_ids;
  std::vector<std::string> chart_ids;
  std::vector<std::string> med_ids;
  std::vector<std::string> bio_ids;
  std::map<std::string, ChartRange> chart_ranges;
  int med_min_frequency = 50;

  int width() const {
    return static_cast<int>(lab_ids.size() + chart_ids.size() + med_ids.size() +
                            bio_ids.size());
  }
  // Table of origin for a flat feature index: "LAB", "CHART", "MED" or "BIO".
  std::string block_of(int index) const;
  std::string feature_name(int index) const;

  std::string to_json() const;
  static FeatureSchema from_json(const std::string& text);
};

using BinaryFeatureVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

// Lab ids = all test ids seen in training; med ids = drugs at or above the
// frequency threshold; bio ids = all organisms seen; chart ids = the
// configured measures.
FeatureSchema fit_schema(const std::vector<AdmissionRecord>& training_records,
                         const std::map<std::string, ChartRange>& chart_ranges,
                         int med_min_frequency);

// Lab bit: strictly more abnormal than normal flags (ties and missing -> 0).
// Chart bit: latest value outside the configured range. Med bit: prescribed.
// Bio bit: any positive result. Unknown ids are ignored.
BinaryFeatureVector vectorize(const AdmissionRecord& record, const FeatureSchema& schema);

struct TreeNode {
  bool leaf = true;
  int feature = -1;  // split feature when internal
  int left = -1;     // child for bit == 0
  int right = -1;    // child for bit == 1
  double probability = 0.0;  // weighted positive fraction at the node
  double weight_positive = 0.0;
  double weight_negative = 0.0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  bool degenerate = false;      // single-class training data

  double predict(const BinaryFeatureVector& bits) const;
};

struct TreeFitOptions {
  int max_depth = 12;
  double min_leaf_weight = 5.0;
};

struct TreeEnsembleModel {
  FeatureSchema schema;
  std::vector<DecisionTree> trees;  // one per code

  std::string to_json() const;
  static TreeEnsembleModel from_json(const std::string& text);
  static TreeEnsembleModel load(const std::string& path);
  void save(const std::string& path) const;
};

// Per code: a one-vs-all tree grown greedily by weighted Gini reduction, with
// class weight total/(2*count_y) inside that code's problem.
TreeEnsembleModel fit_trees(const std::vector<BinaryFeatureVector>& features,
                            const IntMatrix& labels, const FeatureSchema& schema,
                            const TreeFitOptions& options = {});

Vector predict_tabular(const TreeEnsembleModel& model, const BinaryFeatureVector& bits);

}  // namespace medcoder
