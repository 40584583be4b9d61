#include "medcoder/tabular.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace medcoder {

using json = nlohmann::ordered_json;

std::map<std::string, ChartRange> default_chart_ranges() {
  return {{"heart_rate", {60.0, 100.0}},
          {"systolic_bp", {90.0, 120.0}},
          {"diastolic_bp", {60.0, 80.0}},
          {"bmi", {18.5, 25.0}}};
}

std::string FeatureSchema::block_of(int index) const {
  if (index < 0 || index >= width()) throw DataError("FeatureSchema: index out of range");
  std::size_t i = static_cast<std::size_t>(index);
  if (i < lab_ids.size()) return "LAB";
  i -= lab_ids.size();
  if (i < chart_ids.size()) return "CHART";
  i -= chart_ids.size();
  if (i < med_ids.size()) return "MED";
  return "BIO";
}

std::string FeatureSchema::feature_name(int index) const {
  if (index < 0 || index >= width()) throw DataError("FeatureSchema: index out of range");
  std::size_t i = static_cast<std::size_t>(index);
  if (i < lab_ids.size()) return lab_ids[i];
  i -= lab_ids.size();
  if (i < chart_ids.size()) return chart_ids[i];
  i -= chart_ids.size();
  if (i < med_ids.size()) return med_ids[i];
  i -= med_ids.size();
  return bio_ids[i];
}

std::string FeatureSchema::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "feature_schema";
  j["lab_ids"] = lab_ids;
  j["chart_ids"] = chart_ids;
  j["med_ids"] = med_ids;
  j["bio_ids"] = bio_ids;
  j["med_min_frequency"] = med_min_frequency;
  json ranges = json::object();
  for (const auto& [id, r] : chart_ranges) ranges[id] = {{"low", r.low}, {"high", r.high}};
  j["chart_ranges"] = std::move(ranges);
  return j.dump(2);
}

FeatureSchema FeatureSchema::from_json(const std::string& text) {
  const json j = json::parse(text);
  FeatureSchema s;
  s.lab_ids = j.at("lab_ids").get<std::vector<std::string>>();
  s.chart_ids = j.at("chart_ids").get<std::vector<std::string>>();
  s.med_ids = j.at("med_ids").get<std::vector<std::string>>();
  s.bio_ids = j.at("bio_ids").get<std::vector<std::string>>();
  s.med_min_frequency = j.at("med_min_frequency").get<int>();
  for (const auto& [id, r] : j.at("chart_ranges").items())
    s.chart_ranges[id] = {r.at("low").get<double>(), r.at("high").get<double>()};
  return s;
}

FeatureSchema fit_schema(const std::vector<AdmissionRecord>& training_records,
                         const std::map<std::string, ChartRange>& chart_ranges,
                         int med_min_frequency) {
  if (training_records.empty()) throw DataError("fit_schema: empty training set");
  std::set<std::string> labs, bios;
  std::map<std::string, long> med_counts;
  for (const auto& r : training_records) {
    for (const auto& e : r.lab_events) labs.insert(e.test_id);
    for (const auto& e : r.micro_events) bios.insert(e.organism_id);
    for (const auto& m : r.medications) ++med_counts[m];
  }
  FeatureSchema s;
  s.lab_ids.assign(labs.begin(), labs.end());
  s.bio_ids.assign(bios.begin(), bios.end());
  for (const auto& [id, r] : chart_ranges) s.chart_ids.push_back(id);
  s.chart_ranges = chart_ranges;
  s.med_min_frequency = med_min_frequency;
  for (const auto& [drug, count] : med_counts)
    if (count >= med_min_frequency) s.med_ids.push_back(drug);
  return s;
}

BinaryFeatureVector vectorize(const AdmissionRecord& record, const FeatureSchema& schema) {
  BinaryFeatureVector bits = BinaryFeatureVector::Zero(schema.width());
  int offset = 0;

  // LAB: majority vote over flags; ties and missing count as normal.
  {
    std::map<std::string, std::pair<long, long>> flag_counts;  // abnormal, normal
    for (const auto& e : record.lab_events) {
      auto& c = flag_counts[e.test_id];
      if (e.abnormal) ++c.first;
      else ++c.second;
    }
    for (std::size_t i = 0; i < schema.lab_ids.size(); ++i) {
      auto it = flag_counts.find(schema.lab_ids[i]);
      if (it != flag_counts.end() && it->second.first > it->second.second)
        bits[offset + static_cast<int>(i)] = 1;
    }
    offset += static_cast<int>(schema.lab_ids.size());
  }

  // CHART: latest recorded value per measure, out of range -> 1.
  {
    std::map<std::string, double> latest;
    for (const auto& e : record.chart_events) latest[e.measure_id] = e.value;
    for (std::size_t i = 0; i < schema.chart_ids.size(); ++i) {
      auto it = latest.find(schema.chart_ids[i]);
      if (it == latest.end()) continue;
      const auto& range = schema.chart_ranges.at(schema.chart_ids[i]);
      if (it->second < range.low || it->second > range.high)
        bits[offset + static_cast<int>(i)] = 1;
    }
    offset += static_cast<int>(schema.chart_ids.size());
  }

  // MED: prescribed or not.
  {
    const std::set<std::string> drugs(record.medications.begin(), record.medications.end());
    for (std::size_t i = 0; i < schema.med_ids.size(); ++i)
      if (drugs.count(schema.med_ids[i])) bits[offset + static_cast<int>(i)] = 1;
    offset += static_cast<int>(schema.med_ids.size());
  }

  // BIO: any positive culture.
  {
    std::set<std::string> positive;
    for (const auto& e : record.micro_events)
      if (e.positive) positive.insert(e.organism_id);
    for (std::size_t i = 0; i < schema.bio_ids.size(); ++i)
      if (positive.count(schema.bio_ids[i])) bits[offset + static_cast<int>(i)] = 1;
  }
  return bits;
}

namespace {

struct Partition {
  std::vector<int> rows;
  double weight_pos = 0.0;
  double weight_neg = 0.0;
};

double gini(double wp, double wn) {
  const double total = wp + wn;
  if (total <= 0.0) return 0.0;
  const double p = wp / total;
  return 2.0 * p * (1.0 - p);
}

int grow(const std::vector<BinaryFeatureVector>& X, const std::vector<int>& y,
         const std::vector<double>& sample_weight, Partition part, int depth,
         const TreeFitOptions& opt, DecisionTree& tree) {
  TreeNode node;
  const double total = part.weight_pos + part.weight_neg;
  node.weight_positive = part.weight_pos;
  node.weight_negative = part.weight_neg;
  node.probability = total > 0.0 ? part.weight_pos / total : 0.0;

  const bool pure = part.weight_pos == 0.0 || part.weight_neg == 0.0;
  if (!pure && depth < opt.max_depth && total >= 2.0 * opt.min_leaf_weight) {
    const int F = static_cast<int>(X.empty() ? 0 : X[0].size());
    const double parent_impurity = gini(part.weight_pos, part.weight_neg);
    int best_feature = -1;
    double best_gain = 1e-12;
    for (int f = 0; f < F; ++f) {
      double wp1 = 0, wn1 = 0;
      for (int r : part.rows) {
        if (X[static_cast<std::size_t>(r)][f] == 1) {
          if (y[static_cast<std::size_t>(r)] == 1) wp1 += sample_weight[static_cast<std::size_t>(r)];
          else wn1 += sample_weight[static_cast<std::size_t>(r)];
        }
      }
      const double wp0 = part.weight_pos - wp1, wn0 = part.weight_neg - wn1;
      const double w1 = wp1 + wn1, w0 = wp0 + wn0;
      if (w1 < opt.min_leaf_weight || w0 < opt.min_leaf_weight) continue;
      const double gain =
          parent_impurity - (w0 * gini(wp0, wn0) + w1 * gini(wp1, wn1)) / total;
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = f;
      }
    }
    if (best_feature >= 0) {
      Partition left, right;
      for (int r : part.rows) {
        const double w = sample_weight[static_cast<std::size_t>(r)];
        Partition& dest = X[static_cast<std::size_t>(r)][best_feature] == 1 ? right : left;
        dest.rows.push_back(r);
        if (y[static_cast<std::size_t>(r)] == 1) dest.weight_pos += w;
        else dest.weight_neg += w;
      }
      node.leaf = false;
      node.feature = best_feature;
      const int self = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back(node);
      const int li = grow(X, y, sample_weight, std::move(left), depth + 1, opt, tree);
      const int ri = grow(X, y, sample_weight, std::move(right), depth + 1, opt, tree);
      tree.nodes[static_cast<std::size_t>(self)].left = li;
      tree.nodes[static_cast<std::size_t>(self)].right = ri;
      return self;
    }
  }
  const int self = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back(node);
  return self;
}

}  // namespace

double DecisionTree::predict(const BinaryFeatureVector& bits) const {
  int idx = 0;
  while (!nodes[static_cast<std::size_t>(idx)].leaf) {
    const auto& n = nodes[static_cast<std::size_t>(idx)];
    idx = bits[n.feature] == 1 ? n.right : n.left;
  }
  return nodes[static_cast<std::size_t>(idx)].probability;
}

TreeEnsembleModel fit_trees(const std::vector<BinaryFeatureVector>& features,
                            const IntMatrix& labels, const FeatureSchema& schema,
                            const TreeFitOptions& options) {
  if (features.size() < 2) throw DataError("fit_trees: need at least 2 examples");
  if (static_cast<Eigen::Index>(features.size()) != labels.rows())
    throw DataError("fit_trees: feature/label row mismatch");
  for (const auto& x : features)
    if (x.size() != schema.width()) throw DataError("fit_trees: feature width mismatch");

  const int N = static_cast<int>(features.size());
  const int C = static_cast<int>(labels.cols());
  TreeEnsembleModel model;
  model.schema = schema;
  for (int j = 0; j < C; ++j) {
    std::vector<int> y(static_cast<std::size_t>(N));
    long pos = 0;
    for (int i = 0; i < N; ++i) {
      y[static_cast<std::size_t>(i)] = labels(i, j);
      pos += labels(i, j);
    }
    const long neg = N - pos;
    DecisionTree tree;
    if (pos == 0 || neg == 0) {
      // Constant-leaf tree: no counter-examples to learn from.
      std::cerr << "fit_trees: code " << j << " has a single class; constant tree\n";
      TreeNode leaf;
      leaf.probability = pos > 0 ? 1.0 : 0.0;
      leaf.weight_positive = static_cast<double>(pos);
      leaf.weight_negative = static_cast<double>(neg);
      tree.nodes.push_back(leaf);
      tree.degenerate = true;
      model.trees.push_back(std::move(tree));
      continue;
    }
    // total/(2*count_y): positives and negatives carry equal total mass.
    const double w_pos = static_cast<double>(N) / (2.0 * static_cast<double>(pos));
    const double w_neg = static_cast<double>(N) / (2.0 * static_cast<double>(neg));
    std::vector<double> weight(static_cast<std::size_t>(N));
    Partition root;
    for (int i = 0; i < N; ++i) {
      const double w = y[static_cast<std::size_t>(i)] == 1 ? w_pos : w_neg;
      weight[static_cast<std::size_t>(i)] = w;
      root.rows.push_back(i);
      if (y[static_cast<std::size_t>(i)] == 1) root.weight_pos += w;
      else root.weight_neg += w;
    }
    grow(features, y, weight, std::move(root), 0, options, tree);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

Vector predict_tabular(const TreeEnsembleModel& model, const BinaryFeatureVector& bits) {
  if (bits.size() != model.schema.width())
    throw DataError("predict_tabular: feature width mismatch");
  Vector probs(static_cast<Eigen::Index>(model.trees.size()));
  for (std::size_t j = 0; j < model.trees.size(); ++j)
    probs[static_cast<Eigen::Index>(j)] = model.trees[j].predict(bits);
  return probs;
}

std::string TreeEnsembleModel::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "tree_ensemble";
  j["feature_schema"] = json::parse(schema.to_json());
  json trees_json = json::array();
  for (const auto& tree : trees) {
    json nodes = json::array();
    for (const auto& n : tree.nodes) {
      if (n.leaf)
        nodes.push_back({{"leaf", true},
                         {"probability", n.probability},
                         {"weight_positive", n.weight_positive},
                         {"weight_negative", n.weight_negative}});
      else
        nodes.push_back({{"leaf", false},
                         {"feature", n.feature},
                         {"left", n.left},
                         {"right", n.right},
                         {"probability", n.probability},
                         {"weight_positive", n.weight_positive},
                         {"weight_negative", n.weight_negative}});
    }
    trees_json.push_back({{"degenerate", tree.degenerate}, {"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees_json);
  return j.dump(2);
}

TreeEnsembleModel TreeEnsembleModel::from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("kind", "") != "tree_ensemble")
    throw DataError("TreeEnsembleModel: not a tree ensemble file");
  TreeEnsembleModel m;
  m.schema = FeatureSchema::from_json(j.at("feature_schema").dump());
  for (const auto& t : j.at("trees")) {
    DecisionTree tree;
    tree.degenerate = t.at("degenerate").get<bool>();
    for (const auto& n : t.at("nodes")) {
      TreeNode node;
      node.leaf = n.at("leaf").get<bool>();
      node.probability = n.at("probability").get<double>();
      node.weight_positive = n.at("weight_positive").get<double>();
      node.weight_negative = n.at("weight_negative").get<double>();
      if (!node.leaf) {
        node.feature = n.at("feature").get<int>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
      }
      tree.nodes.push_back(node);
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

TreeEnsembleModel TreeEnsembleModel::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("TreeEnsembleModel::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void TreeEnsembleModel::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("TreeEnsembleModel::save: cannot open " + path);
  f << to_json();
}

}  // namespace medcoder
