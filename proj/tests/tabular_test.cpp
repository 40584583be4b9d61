#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medcoder/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

using namespace medcoder;

namespace {

std::vector<AdmissionRecord> schema_records() {
  std::vector<AdmissionRecord> rs(3);
  for (auto& r : rs) r.labels = IntVector::Zero(1);
  rs[0].admission_id = "H0";
  rs[0].patient_id = "P0";
  rs[0].lab_events = {{"lab_a", true}, {"lab_a", false}, {"lab_b", true}};
  rs[0].medications = {"med_x", "med_y"};
  rs[0].chart_events = {{"heart_rate", 80.0}};
  rs[0].micro_events = {{"org_q", false}};
  rs[1].admission_id = "H1";
  rs[1].patient_id = "P1";
  rs[1].lab_events = {{"lab_c", false}};
  rs[1].medications = {"med_x"};
  rs[2].admission_id = "H2";
  rs[2].patient_id = "P2";
  rs[2].medications = {"med_x", "med_z"};
  return rs;
}

}  // namespace

TEST_CASE("fit_schema collects ids and applies the medication threshold") {
  const auto rs = schema_records();
  const FeatureSchema s = fit_schema(rs, default_chart_ranges(), 2);
  CHECK(s.lab_ids == std::vector<std::string>{"lab_a", "lab_b", "lab_c"});
  // med_x appears 3x (>= 2); med_y and med_z once each.
  CHECK(s.med_ids == std::vector<std::string>{"med_x"});
  CHECK(s.bio_ids == std::vector<std::string>{"org_q"});
  CHECK(s.chart_ids.size() == default_chart_ranges().size());
  CHECK(s.width() == static_cast<int>(3 + s.chart_ids.size() + 1 + 1));
}

TEST_CASE("block_of and feature_name cover the flat layout") {
  const auto rs = schema_records();
  const FeatureSchema s = fit_schema(rs, default_chart_ranges(), 1);
  int lab = 0, chart = 0, med = 0, bio = 0;
  for (int f = 0; f < s.width(); ++f) {
    const std::string b = s.block_of(f);
    if (b == "LAB") ++lab;
    else if (b == "CHART") ++chart;
    else if (b == "MED") ++med;
    else if (b == "BIO") ++bio;
    CHECK(!s.feature_name(f).empty());
  }
  CHECK(lab == static_cast<int>(s.lab_ids.size()));
  CHECK(chart == static_cast<int>(s.chart_ids.size()));
  CHECK(med == static_cast<int>(s.med_ids.size()));
  CHECK(bio == static_cast<int>(s.bio_ids.size()));
  CHECK_THROWS_AS(s.block_of(s.width()), DataError);
}

TEST_CASE("vectorize implements the documented bit rules") {
  FeatureSchema s;
  s.lab_ids = {"lab_a", "lab_b", "lab_c"};
  s.chart_ids = {"heart_rate"};
  s.chart_ranges = {{"heart_rate", {60.0, 100.0}}};
  s.med_ids = {"med_x"};
  s.bio_ids = {"org_q"};

  AdmissionRecord r;
  r.labels = IntVector::Zero(1);
  // lab_a: 2 abnormal vs 1 normal -> 1; lab_b: 1-1 tie -> 0; lab_c missing -> 0.
  r.lab_events = {{"lab_a", true}, {"lab_a", true}, {"lab_a", false},
                  {"lab_b", true}, {"lab_b", false}};
  // Latest chart value decides: 110 (out of range) after 80 (in range) -> 1.
  r.chart_events = {{"heart_rate", 80.0}, {"heart_rate", 110.0}};
  r.medications = {"med_x", "med_unknown"};
  r.micro_events = {{"org_q", false}, {"org_q", true}};

  const BinaryFeatureVector v = vectorize(r, s);
  REQUIRE(v.size() == 6);
  CHECK(v[0] == 1);  // lab_a majority abnormal
  CHECK(v[1] == 0);  // lab_b tie
  CHECK(v[2] == 0);  // lab_c absent
  CHECK(v[3] == 1);  // chart latest out of range
  CHECK(v[4] == 1);  // med prescribed
  CHECK(v[5] == 1);  // any positive culture

  // In-range latest value -> 0 even if an earlier one was out of range.
  r.chart_events = {{"heart_rate", 130.0}, {"heart_rate", 90.0}};
  CHECK(vectorize(r, s)[3] == 0);
  // No chart events -> 0.
  r.chart_events.clear();
  CHECK(vectorize(r, s)[3] == 0);
}

namespace {

// Independent weighted-Gini oracle for the best root split.
struct OracleSplit {
  int feature = -1;
  double gain = 0.0;
};

double gini(double wp, double wn) {
  const double tot = wp + wn;
  if (tot <= 0.0) return 0.0;
  const double p = wp / tot;
  return 2.0 * p * (1.0 - p);
}

OracleSplit oracle_root_split(const std::vector<BinaryFeatureVector>& X,
                              const std::vector<int>& y, double w_pos, double w_neg) {
  double wp = 0.0, wn = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? wp : wn) += y[i] ? w_pos : w_neg;
  const double parent = gini(wp, wn);
  const double total = wp + wn;
  OracleSplit best;
  for (int f = 0; f < X[0].size(); ++f) {
    double lp = 0, ln = 0, rp = 0, rn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double w = y[i] ? w_pos : w_neg;
      if (X[i][f] == 0) (y[i] ? lp : ln) += w;
      else (y[i] ? rp : rn) += w;
    }
    const double child =
        ((lp + ln) * gini(lp, ln) + (rp + rn) * gini(rp, rn)) / total;
    const double gain = parent - child;
    if (gain > best.gain + 1e-12) {
      best.gain = gain;
      best.feature = f;
    }
  }
  return best;
}

// Independent interpreter for the serialized tree structure.
double walk_tree(const DecisionTree& tree, const BinaryFeatureVector& x) {
  int n = 0;
  while (!tree.nodes[static_cast<std::size_t>(n)].leaf) {
    const auto& node = tree.nodes[static_cast<std::size_t>(n)];
    n = x[node.feature] == 0 ? node.left : node.right;
  }
  return tree.nodes[static_cast<std::size_t>(n)].probability;
}

}  // namespace

TEST_CASE("root split matches a brute-force weighted-Gini oracle") {
  Rng rng(31);
  std::bernoulli_distribution bit(0.5);
  FeatureSchema s;
  s.lab_ids = {"f0", "f1", "f2", "f3", "f4"};
  for (int trial = 0; trial < 60; ++trial) {
    const int N = 20 + static_cast<int>(rng() % 20);
    std::vector<BinaryFeatureVector> X;
    IntMatrix Y(N, 1);
    std::vector<int> y;
    for (int i = 0; i < N; ++i) {
      BinaryFeatureVector v(5);
      for (int f = 0; f < 5; ++f) v[f] = bit(rng) ? 1 : 0;
      // Label correlates with feature 2, with noise.
      const int label = (v[2] == 1) == (rng() % 5 != 0) ? 1 : 0;
      Y(i, 0) = label;
      y.push_back(label);
      X.push_back(std::move(v));
    }
    const long pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == N) continue;
    const double w_pos = static_cast<double>(N) / (2.0 * static_cast<double>(pos));
    const double w_neg = static_cast<double>(N) / (2.0 * static_cast<double>(N - pos));
    const OracleSplit want = oracle_root_split(X, y, w_pos, w_neg);

    TreeFitOptions opt;
    opt.min_leaf_weight = 1e-9;
    const TreeEnsembleModel model = fit_trees(X, Y, s, opt);
    REQUIRE(model.trees.size() == 1);
    const auto& root = model.trees[0].nodes[0];
    if (want.feature < 0) CHECK(root.leaf);
    else {
      REQUIRE(!root.leaf);
      CHECK(root.feature == want.feature);
    }
  }
}

TEST_CASE("predict agrees with an independent tree walker") {
  Rng rng(47);
  std::bernoulli_distribution bit(0.4);
  FeatureSchema s;
  s.lab_ids = {"a", "b", "c", "d"};
  const int N = 60;
  std::vector<BinaryFeatureVector> X;
  IntMatrix Y(N, 2);
  for (int i = 0; i < N; ++i) {
    BinaryFeatureVector v(4);
    for (int f = 0; f < 4; ++f) v[f] = bit(rng) ? 1 : 0;
    Y(i, 0) = (v[0] & v[1]) ^ (rng() % 7 == 0 ? 1 : 0);
    Y(i, 1) = v[3];
    X.push_back(std::move(v));
  }
  TreeFitOptions opt;
  opt.min_leaf_weight = 1.0;
  const TreeEnsembleModel model = fit_trees(X, Y, s, opt);
  for (const auto& x : X) {
    const Vector p = predict_tabular(model, x);
    for (std::size_t j = 0; j < model.trees.size(); ++j)
      CHECK(p[static_cast<Eigen::Index>(j)] ==
            doctest::Approx(walk_tree(model.trees[j], x)).epsilon(1e-12));
  }
  // A perfectly predictive feature should be learned exactly.
  for (const auto& x : X)
    CHECK((predict_tabular(model, x)[1] >= 0.5 ? 1 : 0) == x[3]);
}

TEST_CASE("class weighting lets a rare positive class dominate its leaf") {
  // 2 positives vs 18 negatives; feature 0 marks the positives exactly.
  FeatureSchema s;
  s.lab_ids = {"marker", "noise"};
  std::vector<BinaryFeatureVector> X;
  IntMatrix Y(20, 1);
  for (int i = 0; i < 20; ++i) {
    BinaryFeatureVector v(2);
    v[0] = i < 2 ? 1 : 0;
    v[1] = i % 2;
    Y(i, 0) = i < 2 ? 1 : 0;
    X.push_back(v);
  }
  TreeFitOptions opt;
  opt.min_leaf_weight = 0.5;
  const TreeEnsembleModel model = fit_trees(X, Y, s, opt);
  BinaryFeatureVector probe(2);
  probe << 1, 0;
  CHECK(predict_tabular(model, probe)[0] > 0.9);
  probe << 0, 0;
  CHECK(predict_tabular(model, probe)[0] < 0.1);
}

TEST_CASE("single-class codes produce flagged constant trees") {
  FeatureSchema s;
  s.lab_ids = {"a"};
  std::vector<BinaryFeatureVector> X(4, BinaryFeatureVector::Zero(1));
  IntMatrix Y(4, 1);
  Y.setZero();
  const TreeEnsembleModel model = fit_trees(X, Y, s, {});
  REQUIRE(model.trees.size() == 1);
  CHECK(model.trees[0].degenerate);
  CHECK(model.trees[0].nodes.size() == 1);
  CHECK(predict_tabular(model, X[0])[0] == 0.0);
}

TEST_CASE("max depth and min leaf weight bound the tree") {
  Rng rng(3);
  std::bernoulli_distribution bit(0.5);
  FeatureSchema s;
  s.lab_ids = {"a", "b", "c", "d", "e", "f"};
  std::vector<BinaryFeatureVector> X;
  IntMatrix Y(200, 1);
  for (int i = 0; i < 200; ++i) {
    BinaryFeatureVector v(6);
    for (int f = 0; f < 6; ++f) v[f] = bit(rng) ? 1 : 0;
    Y(i, 0) = bit(rng) ? 1 : 0;
    X.push_back(std::move(v));
  }
  TreeFitOptions opt;
  opt.max_depth = 2;
  opt.min_leaf_weight = 1.0;
  const TreeEnsembleModel model = fit_trees(X, Y, s, opt);
  // Depth-2 binary tree has at most 7 nodes.
  CHECK(model.trees[0].nodes.size() <= 7);

  std::function<int(const DecisionTree&, int)> depth = [&](const DecisionTree& t, int n) {
    const auto& node = t.nodes[static_cast<std::size_t>(n)];
    if (node.leaf) return 0;
    return 1 + std::max(depth(t, node.left), depth(t, node.right));
  };
  CHECK(depth(model.trees[0], 0) <= 2);
}

TEST_CASE("schema and ensemble json round-trip") {
  const auto rs = schema_records();
  const FeatureSchema s = fit_schema(rs, default_chart_ranges(), 1);
  const FeatureSchema t = FeatureSchema::from_json(s.to_json());
  CHECK(t.lab_ids == s.lab_ids);
  CHECK(t.chart_ids == s.chart_ids);
  CHECK(t.med_ids == s.med_ids);
  CHECK(t.bio_ids == s.bio_ids);
  CHECK(t.med_min_frequency == s.med_min_frequency);
  CHECK(t.chart_ranges.at("heart_rate").low == s.chart_ranges.at("heart_rate").low);

  std::vector<BinaryFeatureVector> X;
  IntMatrix Y(static_cast<Eigen::Index>(rs.size()), 1);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    X.push_back(vectorize(rs[i], s));
    Y(static_cast<Eigen::Index>(i), 0) = static_cast<int>(i % 2);
  }
  TreeFitOptions opt;
  opt.min_leaf_weight = 0.5;
  const TreeEnsembleModel model = fit_trees(X, Y, s, opt);
  const TreeEnsembleModel copy = TreeEnsembleModel::from_json(model.to_json());
  REQUIRE(copy.trees.size() == model.trees.size());
  for (const auto& x : X)
    CHECK((predict_tabular(model, x) - predict_tabular(copy, x)).norm() == 0.0);
}

TEST_CASE("default chart ranges match the documented vitals") {
  const auto ranges = default_chart_ranges();
  CHECK(ranges.at("heart_rate").low == 60.0);
  CHECK(ranges.at("heart_rate").high == 100.0);
  CHECK(ranges.at("bmi").low == doctest::Approx(18.5));
}
