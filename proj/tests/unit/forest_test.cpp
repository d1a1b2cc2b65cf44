#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "qent/forest.hpp"

using namespace qent;

namespace {

FeatureMatrix table(std::initializer_list<std::initializer_list<double>> rows) {
  FeatureMatrix x(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::copy(r.begin(), r.end(), x.row(i++).begin());
  }
  return x;
}

struct Blob {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
};

// Label depends on features 0 and 2 only; the rest are noise.
Blob random_blob(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng = derive_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Blob b{FeatureMatrix(n, d), std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) b.x(i, j) = u(rng);
    const bool flip = u(rng) < 0.05;
    b.y[i] = ((b.x(i, 0) + b.x(i, 2) > 1.0) != flip) ? 1 : 0;
  }
  return b;
}

ForestConfig single_tree(std::size_t max_features) {
  ForestConfig c;
  c.n_estimators = 1;
  c.max_features = max_features;
  c.bootstrap = false;
  return c;
}

}  // namespace

TEST(Gini, Examples) {
  const double a[] = {10, 0}, b[] = {5, 5}, c[] = {3, 1};
  EXPECT_DOUBLE_EQ(gini(a), 0.0);
  EXPECT_DOUBLE_EQ(gini(b), 0.5);
  EXPECT_DOUBLE_EQ(gini(c), 0.375);
  const double empty[] = {0, 0};
  EXPECT_THROW(gini(empty), Error);
}

TEST(FitTree, OneDimensionalSplitAtMidpoint) {
  const FeatureMatrix x = table({{0.0}, {0.1}, {0.9}, {1.0}});
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  Rng rng = derive_rng(1);
  const DecisionTree t = fit_tree(x, y, single_tree(1), rng);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.nodes()[0].feature, 0);
  EXPECT_DOUBLE_EQ(t.nodes()[0].threshold, 0.5);
  const double lo[] = {0.2}, hi[] = {0.7};
  EXPECT_EQ(t.predict_proba(lo), 0.0);
  EXPECT_EQ(t.predict_proba(hi), 1.0);
  EXPECT_EQ(t.depth(), 1u);
}

TEST(FitTree, IdenticalFeaturesGiveSingleLeaf) {
  const FeatureMatrix x = table({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
  const std::vector<std::uint8_t> y{0, 1, 1, 1};
  Rng rng = derive_rng(2);
  const DecisionTree t = fit_tree(x, y, single_tree(2), rng);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t.nodes()[0].prob, 0.75);
}

TEST(FitTree, XorNeedsDepthTwo) {
  const FeatureMatrix x = table({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {0, 0}, {0, 1}, {1, 0}, {1, 1}});
  const std::vector<std::uint8_t> y{0, 1, 1, 0, 0, 1, 1, 0};
  Rng rng = derive_rng(3);
  // A single axis split has zero gain on XOR, so a greedy tree stops at the root.
  const DecisionTree t = fit_tree(x, y, single_tree(2), rng);
  EXPECT_EQ(t.size(), 1u);

  // With a slight imbalance the first split has gain and the tree resolves XOR.
  const FeatureMatrix x2 = table({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {0, 0}});
  const std::vector<std::uint8_t> y2{0, 1, 1, 0, 0};
  Rng rng2 = derive_rng(3);
  const DecisionTree t2 = fit_tree(x2, y2, single_tree(2), rng2);
  EXPECT_EQ(t2.depth(), 2u);
  for (std::size_t i = 0; i < x2.rows; ++i) EXPECT_EQ(t2.predict_proba(x2.row(i)), y2[i]);
}

TEST(FitTree, PureTrainingFitWithoutLimits) {
  const Blob b = random_blob(400, 5, 11);
  Rng rng = derive_rng(4);
  const DecisionTree t = fit_tree(b.x, b.y, single_tree(5), rng);
  for (std::size_t i = 0; i < b.x.rows; ++i) EXPECT_EQ(t.predict_proba(b.x.row(i)), b.y[i]);
}

TEST(FitTree, DepthAndLeafLimitsHold) {
  const Blob b = random_blob(600, 4, 12);
  ForestConfig c = single_tree(4);
  c.max_depth = 3;
  Rng rng = derive_rng(5);
  EXPECT_LE(fit_tree(b.x, b.y, c, rng).depth(), 3u);
  c.max_depth.reset();
  c.min_samples_leaf = 25;
  const DecisionTree t = fit_tree(b.x, b.y, c, rng);
  for (const TreeNode& n : t.nodes()) {
    if (n.is_leaf()) EXPECT_GE(n.weight(), 25.0);
  }
}

TEST(FitTree, PreOrderLayout) {
  const Blob b = random_blob(300, 3, 13);
  Rng rng = derive_rng(6);
  const DecisionTree t = fit_tree(b.x, b.y, single_tree(3), rng);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const TreeNode& n = t.nodes()[k];
    if (n.is_leaf()) continue;
    EXPECT_EQ(static_cast<std::size_t>(n.left), k + 1);
    EXPECT_GT(n.right, n.left);
    const TreeNode& l = t.nodes()[static_cast<std::size_t>(n.left)];
    const TreeNode& r = t.nodes()[static_cast<std::size_t>(n.right)];
    EXPECT_EQ(l.count0 + r.count0, n.count0);
    EXPECT_EQ(l.count1 + r.count1, n.count1);
  }
}

TEST(Forest, SingleTreeWithoutBootstrapMatchesFitTree) {
  const Blob b = random_blob(300, 6, 21);
  ForestConfig c = single_tree(3);
  c.seed = 9;
  const RandomForest f = fit_forest(b.x, b.y, c);
  Rng rng = derive_rng(9, {stream::kForest, 0});
  const DecisionTree t = fit_tree(b.x, b.y, c, rng);
  EXPECT_EQ(f.trees().front(), t);
}

TEST(Forest, DeterministicAndThreadIndependent) {
  const Blob b = random_blob(500, 6, 22);
  ForestConfig c;
  c.n_estimators = 12;
  c.max_features = 2;
  c.seed = 4;
  const RandomForest a = fit_forest(b.x, b.y, c);
  const RandomForest again = fit_forest(b.x, b.y, c);
  EXPECT_EQ(a, again);
  c.threads = 3;
  const RandomForest threaded = fit_forest(b.x, b.y, c);
  EXPECT_EQ(a.trees(), threaded.trees());
}

TEST(Forest, TieVotesGoToEntangled) {
  std::vector<TreeNode> one{TreeNode{}}, zero{TreeNode{}};
  one[0].prob = 1.0;
  one[0].count1 = 1;
  zero[0].prob = 0.0;
  zero[0].count0 = 1;
  const RandomForest f(ForestConfig{}, 1, {DecisionTree(one), DecisionTree(zero)});
  const double x[] = {0.3};
  EXPECT_DOUBLE_EQ(f.predict_proba(x), 0.5);
  EXPECT_TRUE(f.predict_class(x));
}

TEST(Forest, TreeOrderDoesNotChangePredictions) {
  const Blob b = random_blob(300, 4, 23);
  ForestConfig c;
  c.n_estimators = 8;
  c.max_features = 2;
  const RandomForest f = fit_forest(b.x, b.y, c);
  std::vector<DecisionTree> reversed(f.trees().rbegin(), f.trees().rend());
  const RandomForest g(f.config(), f.n_features(), reversed);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(f.predict_proba(b.x.row(i)), g.predict_proba(b.x.row(i)), 1e-15);
  }
}

TEST(Forest, MonotoneFeatureTransformKeepsPartition) {
  const Blob b = random_blob(300, 3, 24);
  Blob t = b;
  for (double& v : t.x.values) v = std::exp(3.0 * v);
  ForestConfig c = single_tree(3);
  Rng r1 = derive_rng(7), r2 = derive_rng(7);
  const DecisionTree a = fit_tree(b.x, b.y, c, r1);
  const DecisionTree e = fit_tree(t.x, t.y, c, r2);
  ASSERT_EQ(a.size(), e.size());
  for (std::size_t i = 0; i < b.x.rows; ++i) EXPECT_EQ(a.leaf_index(b.x.row(i)), e.leaf_index(t.x.row(i)));
}

TEST(Mdi, SingleSplitGetsAllImportance) {
  const FeatureMatrix x = table({{5.0, 0.0}, {5.0, 0.1}, {5.0, 0.9}, {5.0, 1.0}});
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  const RandomForest f = fit_forest(x, y, single_tree(2));
  const auto m = f.mdi();
  EXPECT_DOUBLE_EQ(m[0], 0.0);
  EXPECT_DOUBLE_EQ(m[1], 1.0);
}

TEST(Mdi, SumsToOneAndIgnoresNoise) {
  Blob b = random_blob(800, 5, 25);
  for (std::size_t i = 0; i < b.x.rows; ++i) b.x(i, 4) = 0.25;  // constant, never split on
  ForestConfig c;
  c.n_estimators = 10;
  c.max_features = 3;
  const auto m = fit_forest(b.x, b.y, c).mdi();
  EXPECT_NEAR(std::accumulate(m.begin(), m.end(), 0.0), 1.0, 1e-12);
  EXPECT_EQ(m[4], 0.0);
  EXPECT_GT(m[0], m[1]);
  EXPECT_GT(m[2], m[3]);
}

TEST(Forest, SaveLoadRoundTrip) {
  const Blob b = random_blob(300, 4, 26);
  ForestConfig c;
  c.n_estimators = 5;
  c.max_features = 2;
  c.max_depth = 6;
  c.min_samples_leaf = 3;
  const RandomForest f = fit_forest(b.x, b.y, c);
  std::stringstream s;
  f.save(s);
  const RandomForest g = RandomForest::load(s);
  EXPECT_EQ(f, g);

  std::stringstream bad("QRFX....");
  EXPECT_THROW(RandomForest::load(bad), Error);
  std::string bytes;
  {
    std::stringstream t;
    f.save(t);
    bytes = t.str();
  }
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(RandomForest::load(truncated), Error);
}

TEST(Forest, ConfigValidation) {
  const Blob b = random_blob(50, 4, 27);
  ForestConfig c;
  c.max_features = 5;
  EXPECT_THROW(fit_forest(b.x, b.y, c), Error);
  c.max_features = 0;
  EXPECT_THROW(fit_forest(b.x, b.y, c), Error);
  c.max_features = 2;
  c.n_estimators = 0;
  EXPECT_THROW(fit_forest(b.x, b.y, c), Error);
}
