#pragma once

// CART decision trees and a bagged random-forest classifier with Gini
// impurity, soft voting and mean-decrease-in-impurity importances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qent/binary_io.hpp"
#include "qent/errors.hpp"
#include "qent/parallel.hpp"
#include "qent/rng.hpp"

namespace qent {

/// Dense row-major feature table.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c) {}

  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
};

struct ForestConfig {
  std::size_t n_estimators = 200;
  std::size_t max_features = 4;
  std::optional<std::size_t> max_depth;         // unbounded when empty
  std::optional<std::size_t> min_samples_leaf;  // 1 when empty
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

namespace presets {
// Table of tuned hyperparameters, with the ensemble cut to 200 trees.
inline ForestConfig rf1() { return {200, 4, std::nullopt, std::nullopt, true, 0, 1}; }
inline ForestConfig rf2() { return {200, 16, 20, std::nullopt, true, 0, 1}; }
inline ForestConfig rf3() { return {200, 4, std::nullopt, 100, true, 0, 1}; }
/// Smaller, regularized forest used for interaction values.
inline ForestConfig siv() { return {100, 4, std::nullopt, 20, true, 0, 1}; }
}  // namespace presets

inline void validate(const ForestConfig& c, std::size_t n_features) {
  if (c.n_estimators < 1) fail(ErrorKind::InvalidConfig, "n_estimators must be >= 1");
  if (c.max_features < 1 || c.max_features > n_features) {
    fail(ErrorKind::InvalidConfig, "max_features must lie in 1..feature count");
  }
  if (c.max_depth && *c.max_depth < 1) fail(ErrorKind::InvalidConfig, "max_depth must be >= 1");
  if (c.min_samples_leaf && *c.min_samples_leaf < 1) {
    fail(ErrorKind::InvalidConfig, "min_samples_leaf must be >= 1");
  }
}

/// 1 - sum p_i^2.
inline double gini(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (!(total > 0.0)) fail(ErrorKind::EmptyNode, "gini of an empty node");
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

inline double gini2(double n0, double n1) {
  const double counts[2] = {n0, n1};
  return gini(counts);
}

/// One node of a flattened tree. Nodes are stored in pre-order, so the left
/// child of a split at index k is always k + 1.
struct TreeNode {
  std::int16_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double prob = 0.0;          // entangled fraction of the training samples here
  std::uint32_t count0 = 0;   // bootstrap-weighted class counts
  std::uint32_t count1 = 0;

  bool is_leaf() const { return feature < 0; }
  double weight() const { return static_cast<double>(count0) + count1; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  std::size_t leaf_index(std::span<const double> x) const {
    std::size_t k = 0;
    while (!nodes_[k].is_leaf()) {
      const TreeNode& n = nodes_[k];
      k = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? static_cast<std::size_t>(n.left)
                                                               : static_cast<std::size_t>(n.right);
    }
    return k;
  }

  double predict_proba(std::span<const double> x) const { return nodes_[leaf_index(x)].prob; }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      const auto [k, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes_[k].is_leaf()) {
        stack.push_back({static_cast<std::size_t>(nodes_[k].left), d + 1});
        stack.push_back({static_cast<std::size_t>(nodes_[k].right), d + 1});
      }
    }
    return best;
  }

  /// Per-feature sum of weighted Gini decreases, normalized to sum 1 (all
  /// zero if the tree is a single leaf).
  std::vector<double> impurity_importance(std::size_t n_features) const {
    std::vector<double> imp(n_features, 0.0);
    const double total = nodes_.front().weight();
    for (const TreeNode& n : nodes_) {
      if (n.is_leaf()) continue;
      const TreeNode& l = nodes_[static_cast<std::size_t>(n.left)];
      const TreeNode& r = nodes_[static_cast<std::size_t>(n.right)];
      const double decrease = n.weight() * gini2(n.count0, n.count1) -
                              l.weight() * gini2(l.count0, l.count1) -
                              r.weight() * gini2(r.count0, r.count1);
      imp[static_cast<std::size_t>(n.feature)] += decrease / total;
    }
    const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (s > 0.0) {
      for (double& v : imp) v /= s;
    }
    return imp;
  }

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

namespace detail {

struct SortItem {
  double value;
  std::uint32_t weight;
  std::uint8_t label;
};

/// Greedy CART growth on the samples with nonzero weight.
class TreeBuilder {
 public:
  TreeBuilder(const std::vector<double>& columns, std::size_t n_rows, std::size_t n_features,
              std::span<const std::uint8_t> labels, const ForestConfig& config)
      : columns_(columns), n_rows_(n_rows), n_features_(n_features), labels_(labels),
        config_(config),
        min_leaf_(static_cast<double>(config.min_samples_leaf.value_or(1))) {}

  DecisionTree build(std::span<const std::uint32_t> weights, Rng& rng) {
    weights_ = weights;
    std::vector<std::uint32_t> idx;
    for (std::uint32_t i = 0; i < n_rows_; ++i) {
      if (weights_[i] > 0) idx.push_back(i);
    }
    std::vector<TreeNode> nodes;
    struct Task {
      std::size_t begin, end, depth;
      std::int64_t parent;  // index of the split whose right child this is, or -1
    };
    std::vector<Task> stack{{0, idx.size(), 0, -1}};
    std::vector<std::size_t> features(n_features_);
    std::iota(features.begin(), features.end(), 0);

    while (!stack.empty()) {
      const Task t = stack.back();
      stack.pop_back();
      const std::size_t self = nodes.size();
      if (t.parent >= 0) nodes[static_cast<std::size_t>(t.parent)].right = static_cast<std::int32_t>(self);

      double n0 = 0.0, n1 = 0.0;
      for (std::size_t k = t.begin; k < t.end; ++k) {
        const std::uint32_t i = idx[k];
        (labels_[i] ? n1 : n0) += weights_[i];
      }
      TreeNode node;
      node.count0 = static_cast<std::uint32_t>(n0);
      node.count1 = static_cast<std::uint32_t>(n1);
      node.prob = n1 / (n0 + n1);

      const bool depth_ok = !config_.max_depth || t.depth < *config_.max_depth;
      Split best;
      if (n0 > 0.0 && n1 > 0.0 && depth_ok && n0 + n1 >= 2.0 * min_leaf_) {
        best = find_split(idx, t.begin, t.end, n0, n1, features, rng);
      }
      if (!best.found) {
        nodes.push_back(node);
        continue;
      }
      node.feature = static_cast<std::int16_t>(best.feature);
      node.threshold = best.threshold;
      node.left = static_cast<std::int32_t>(self + 1);
      nodes.push_back(node);

      const double* col = columns_.data() + best.feature * n_rows_;
      const auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(t.begin),
                                      idx.begin() + static_cast<std::ptrdiff_t>(t.end),
                                      [&](std::uint32_t i) { return col[i] <= best.threshold; });
      const std::size_t m = static_cast<std::size_t>(mid - idx.begin());
      // Right first so the left subtree is emitted directly after its parent.
      stack.push_back({m, t.end, t.depth + 1, static_cast<std::int64_t>(self)});
      stack.push_back({t.begin, m, t.depth + 1, -1});
    }
    return DecisionTree(std::move(nodes));
  }

 private:
  struct Split {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double score = 0.0;
  };

  // Candidate features are visited in a random order until max_features
  // non-constant ones have been scanned. The split maximizes
  // sum_child (c0^2 + c1^2) / n_child, which is the same as maximizing the
  // weighted Gini decrease.
  Split find_split(const std::vector<std::uint32_t>& idx, std::size_t begin, std::size_t end,
                   double n0, double n1, std::vector<std::size_t>& features, Rng& rng) {
    const double n = n0 + n1;
    const double parent_score = (n0 * n0 + n1 * n1) / n;
    Split best;
    std::size_t scanned = 0;
    for (std::size_t f_pos = 0; f_pos < n_features_ && scanned < config_.max_features; ++f_pos) {
      const std::size_t pick =
          f_pos + std::uniform_int_distribution<std::size_t>(0, n_features_ - 1 - f_pos)(rng);
      std::swap(features[f_pos], features[pick]);
      const std::size_t f = features[f_pos];
      const double* col = columns_.data() + f * n_rows_;

      items_.clear();
      double lo = col[idx[begin]], hi = lo;
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint32_t i = idx[k];
        items_.push_back({col[i], weights_[i], labels_[i]});
        lo = std::min(lo, col[i]);
        hi = std::max(hi, col[i]);
      }
      if (!(hi > lo)) continue;
      ++scanned;
      std::sort(items_.begin(), items_.end(),
                [](const SortItem& a, const SortItem& b) { return a.value < b.value; });

      double l0 = 0.0, l1 = 0.0;
      for (std::size_t k = 0; k + 1 < items_.size(); ++k) {
        (items_[k].label ? l1 : l0) += items_[k].weight;
        if (items_[k + 1].value == items_[k].value) continue;
        const double nl = l0 + l1;
        const double nr = n - nl;
        if (nl < min_leaf_ || nr < min_leaf_) continue;
        const double r0 = n0 - l0, r1 = n1 - l1;
        const double score = (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr;
        if (!(score - parent_score > 1e-12 * n)) continue;
        double thr = 0.5 * (items_[k].value + items_[k + 1].value);
        if (thr >= items_[k + 1].value) thr = items_[k].value;
        const bool better = !best.found || score > best.score ||
                            (score == best.score && (f < best.feature ||
                                                     (f == best.feature && thr < best.threshold)));
        if (better) best = {true, f, thr, score};
      }
    }
    return best;
  }

  const std::vector<double>& columns_;
  std::size_t n_rows_;
  std::size_t n_features_;
  std::span<const std::uint8_t> labels_;
  const ForestConfig& config_;
  double min_leaf_;
  std::span<const std::uint32_t> weights_;
  std::vector<SortItem> items_;
};

inline std::vector<double> column_major(const FeatureMatrix& x) {
  std::vector<double> cols(x.rows * x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) cols[j * x.rows + i] = x(i, j);
  }
  return cols;
}

inline void check_training_data(const FeatureMatrix& x, std::span<const std::uint8_t> y) {
  if (x.rows == 0) fail(ErrorKind::EmptyInput, "no training samples");
  if (y.size() != x.rows) fail(ErrorKind::InvalidArgument, "label count differs from sample count");
  for (std::uint8_t v : y) {
    if (v > 1) fail(ErrorKind::InvalidArgument, "labels must be 0 or 1");
  }
  for (double v : x.values) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "training features must be finite");
  }
}

}  // namespace detail

/// Single tree on the full, unweighted sample set.
inline DecisionTree fit_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                             const ForestConfig& config, Rng& rng) {
  detail::check_training_data(x, y);
  validate(config, x.cols);
  const std::vector<double> cols = detail::column_major(x);
  const std::vector<std::uint32_t> weights(x.rows, 1);
  detail::TreeBuilder builder(cols, x.rows, x.cols, y, config);
  return builder.build(weights, rng);
}

class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(ForestConfig config, std::size_t n_features, std::vector<DecisionTree> trees)
      : config_(config), n_features_(n_features), trees_(std::move(trees)) {}

  const ForestConfig& config() const { return config_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  bool oob_available() const { return config_.bootstrap; }

  /// Mean of the leaf probabilities over trees.
  double predict_proba(std::span<const double> x) const {
    if (x.size() != n_features_) fail(ErrorKind::InvalidArgument, "feature count mismatch");
    double s = 0.0;
    for (const DecisionTree& t : trees_) s += t.predict_proba(x);
    return s / static_cast<double>(trees_.size());
  }

  /// Entangled when the probability is >= 0.5.
  bool predict_class(std::span<const double> x) const { return predict_proba(x) >= 0.5; }

  std::vector<double> predict_proba(const FeatureMatrix& x, std::size_t threads = 1) const {
    std::vector<double> out(x.rows);
    parallel_for(x.rows, threads, [&](std::size_t i) { out[i] = predict_proba(x.row(i)); });
    return out;
  }

  /// Mean over trees of each tree's normalized impurity importance.
  std::vector<double> mdi() const {
    std::vector<double> out(n_features_, 0.0);
    for (const DecisionTree& t : trees_) {
      const std::vector<double> imp = t.impurity_importance(n_features_);
      for (std::size_t f = 0; f < n_features_; ++f) out[f] += imp[f];
    }
    for (double& v : out) v /= static_cast<double>(trees_.size());
    return out;
  }

  void save(std::ostream& out) const;
  static RandomForest load(std::istream& in);

  friend bool operator==(const RandomForest&, const RandomForest&) = default;

 private:
  ForestConfig config_;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
};

/// Tree t is grown on a bootstrap resample drawn from stream (seed, t), so
/// the forest does not depend on the thread count.
inline RandomForest fit_forest(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                               const ForestConfig& config) {
  detail::check_training_data(x, y);
  validate(config, x.cols);
  if (x.rows > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorKind::InvalidArgument, "too many samples");
  }
  const std::vector<double> cols = detail::column_major(x);
  std::vector<DecisionTree> trees(config.n_estimators);
  parallel_for(config.n_estimators, config.threads, [&](std::size_t t) {
    Rng rng = derive_rng(config.seed, {stream::kForest, t});
    std::vector<std::uint32_t> weights(x.rows, config.bootstrap ? 0 : 1);
    if (config.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, x.rows - 1);
      for (std::size_t k = 0; k < x.rows; ++k) ++weights[pick(rng)];
    }
    detail::TreeBuilder builder(cols, x.rows, x.cols, y, config);
    trees[t] = builder.build(weights, rng);
  });
  return RandomForest(config, x.cols, std::move(trees));
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::string_view kForestMagic = "QRFM";
inline constexpr std::uint32_t kForestFormatVersion = 1;

inline void RandomForest::save(std::ostream& out) const {
  bin::write_magic(out, kForestMagic);
  bin::write<std::uint32_t>(out, kForestFormatVersion);
  bin::write<std::uint64_t>(out, config_.n_estimators);
  bin::write<std::uint64_t>(out, config_.max_features);
  bin::write<std::uint64_t>(out, config_.max_depth.value_or(0));
  bin::write<std::uint64_t>(out, config_.min_samples_leaf.value_or(0));
  bin::write<std::uint8_t>(out, config_.bootstrap ? 1 : 0);
  bin::write<std::uint64_t>(out, config_.seed);
  bin::write<std::uint64_t>(out, n_features_);
  bin::write<std::uint64_t>(out, trees_.size());
  for (const DecisionTree& t : trees_) {
    bin::write<std::uint64_t>(out, t.size());
    for (const TreeNode& n : t.nodes()) {
      bin::write<std::int16_t>(out, n.feature);
      bin::write<double>(out, n.threshold);
      bin::write<std::int32_t>(out, n.left);
      bin::write<std::int32_t>(out, n.right);
      bin::write<double>(out, n.prob);
      bin::write<std::uint32_t>(out, n.count0);
      bin::write<std::uint32_t>(out, n.count1);
    }
  }
  if (!out) fail(ErrorKind::IoFailure, "failed writing forest");
}

inline RandomForest RandomForest::load(std::istream& in) {
  bin::expect_magic(in, kForestMagic);
  const auto version = bin::read<std::uint32_t>(in);
  if (version != kForestFormatVersion) {
    fail(ErrorKind::FormatError, "unsupported forest format version " + std::to_string(version));
  }
  ForestConfig c;
  c.n_estimators = bin::read<std::uint64_t>(in);
  c.max_features = bin::read<std::uint64_t>(in);
  if (const auto d = bin::read<std::uint64_t>(in)) c.max_depth = d;
  if (const auto m = bin::read<std::uint64_t>(in)) c.min_samples_leaf = m;
  c.bootstrap = bin::read<std::uint8_t>(in) != 0;
  c.seed = bin::read<std::uint64_t>(in);
  const auto n_features = bin::read<std::uint64_t>(in);
  const auto n_trees = bin::read<std::uint64_t>(in);
  if (n_trees != c.n_estimators || n_features == 0 || n_features > 4096) {
    fail(ErrorKind::FormatError, "inconsistent forest header");
  }
  std::vector<DecisionTree> trees;
  trees.reserve(n_trees);
  for (std::uint64_t t = 0; t < n_trees; ++t) {
    const auto n_nodes = bin::read<std::uint64_t>(in);
    if (n_nodes == 0 || n_nodes > (1ULL << 31)) fail(ErrorKind::FormatError, "bad node count");
    std::vector<TreeNode> nodes(n_nodes);
    for (TreeNode& n : nodes) {
      n.feature = bin::read<std::int16_t>(in);
      n.threshold = bin::read<double>(in);
      n.left = bin::read<std::int32_t>(in);
      n.right = bin::read<std::int32_t>(in);
      n.prob = bin::read<double>(in);
      n.count0 = bin::read<std::uint32_t>(in);
      n.count1 = bin::read<std::uint32_t>(in);
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const TreeNode& n = nodes[k];
      if (n.is_leaf()) continue;
      const bool ok = n.feature < static_cast<std::int64_t>(n_features) &&
                      n.left == static_cast<std::int32_t>(k + 1) &&
                      n.right > n.left && static_cast<std::uint64_t>(n.right) < n_nodes;
      if (!ok) fail(ErrorKind::FormatError, "corrupt tree node");
    }
    trees.emplace_back(std::move(nodes));
  }
  return RandomForest(c, n_features, std::move(trees));
}

inline void save_forest(const RandomForest& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path);
  f.save(out);
}

inline RandomForest load_forest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path);
  return RandomForest::load(in);
}

}  // namespace qent
