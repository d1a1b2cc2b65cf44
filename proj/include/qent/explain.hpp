#pragma once

// Interventional Shapley values and pairwise interaction values, their
// global aggregates, an exact closed form for tree ensembles, and PCA.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "qent/errors.hpp"
#include "qent/forest.hpp"
#include "qent/mlp.hpp"
#include "qent/parallel.hpp"
#include "qent/qcore.hpp"
#include "qent/rng.hpp"
#include "qent/tomography.hpp"

namespace qent {

/// Evaluates a model on every row of `rows`, writing one value per row.
using BatchPredictor = std::function<void(const FeatureMatrix& rows, std::span<double> out)>;

enum class ShapleyMode : std::uint8_t { ExactEnumeration, PermutationSampling };

struct ValueFunction {
  BatchPredictor predictor;
  FeatureMatrix background;
  ShapleyMode mode = ShapleyMode::ExactEnumeration;
  std::size_t n_permutations = 256;
  std::uint64_t seed = 0;

  std::size_t n_features() const { return background.cols; }
};

/// Square interaction table, row-major.
struct InteractionTable {
  std::size_t n = 0;
  std::vector<double> v;

  InteractionTable() = default;
  explicit InteractionTable(std::size_t size) : n(size), v(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
};

struct ShapleyResult {
  std::vector<double> phi;
  std::optional<InteractionTable> interactions;
  double base_value = 0.0;
  double sample_prediction = 0.0;
};

inline constexpr std::size_t kMaxExactFeatures = 20;

namespace detail {

inline void check_value_function(const ValueFunction& vf, std::size_t x_size) {
  if (vf.background.rows == 0) fail(ErrorKind::EmptyBackground, "background set is empty");
  if (!vf.predictor) fail(ErrorKind::InvalidArgument, "value function has no predictor");
  if (x_size != vf.background.cols) fail(ErrorKind::InvalidArgument, "sample/background width mismatch");
}

inline double predict_one(const BatchPredictor& f, std::span<const double> x) {
  FeatureMatrix row(1, x.size());
  std::copy(x.begin(), x.end(), row.values.begin());
  double out = 0.0;
  f(row, {&out, 1});
  return out;
}

inline double factorial(std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 2; i <= k; ++i) r *= static_cast<double>(i);
  return r;
}

/// F[S] for every subset mask S, each averaged over the background. Subsets
/// are visited in Gray-code order so that consecutive hybrid rows differ in
/// one entry.
inline std::vector<double> subset_values(const ValueFunction& vf, std::span<const double> x) {
  const std::size_t m = vf.n_features();
  if (m > kMaxExactFeatures) {
    fail(ErrorKind::SubsetBudgetExceeded, "exact enumeration is limited to 20 features");
  }
  const std::size_t n_subsets = std::size_t{1} << m;
  std::vector<double> values(n_subsets, 0.0);
  constexpr std::size_t kBatch = 4096;
  FeatureMatrix batch(std::min(kBatch, n_subsets), m);
  std::vector<std::size_t> masks(batch.rows);
  std::vector<double> out(batch.rows);
  for (std::size_t b = 0; b < vf.background.rows; ++b) {
    std::vector<double> z(vf.background.row(b).begin(), vf.background.row(b).end());
    std::size_t filled = 0;
    auto flush = [&] {
      if (filled == 0) return;
      FeatureMatrix view = batch;
      if (filled != batch.rows) {
        view.rows = filled;
        view.values.resize(filled * m);
      }
      vf.predictor(view, {out.data(), filled});
      for (std::size_t k = 0; k < filled; ++k) values[masks[k]] += out[k];
      filled = 0;
    };
    for (std::size_t g = 0; g < n_subsets; ++g) {
      const std::size_t mask = g ^ (g >> 1);
      if (g > 0) {
        const std::size_t flipped = static_cast<std::size_t>(std::countr_zero(g));
        z[flipped] = (mask >> flipped) & 1 ? x[flipped] : vf.background(b, flipped);
      }
      std::copy(z.begin(), z.end(), batch.row(filled).begin());
      masks[filled++] = mask;
      if (filled == batch.rows) flush();
    }
    flush();
  }
  const double inv = 1.0 / static_cast<double>(vf.background.rows);
  for (double& v : values) v *= inv;
  return values;
}

}  // namespace detail

/// Mean over the background of the model evaluated on x's entries in S and
/// the background entries elsewhere. S is a bit mask over features.
inline double value_of_subset(const ValueFunction& vf, std::span<const double> x, std::uint64_t subset) {
  detail::check_value_function(vf, x.size());
  FeatureMatrix rows = vf.background;
  for (std::size_t b = 0; b < rows.rows; ++b) {
    for (std::size_t i = 0; i < rows.cols; ++i) {
      if ((subset >> i) & 1) rows(b, i) = x[i];
    }
  }
  std::vector<double> out(rows.rows);
  vf.predictor(rows, out);
  return std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(rows.rows);
}

/// Shapley values and, for exact enumeration, pairwise interaction values
/// phi_ij = sum_S |S|! (M - |S| - 2)! / (2 (M - 1)!) * delta_ij f(S), so that
/// phi_ij + phi_ji is the full pair interaction. The diagonal holds the
/// main-effect residual phi_i - sum_{j != i} phi_ij.
inline ShapleyResult explain_sample(const ValueFunction& vf, std::span<const double> x,
                                    bool with_interactions) {
  detail::check_value_function(vf, x.size());
  const std::size_t m = vf.n_features();
  ShapleyResult r;
  r.phi.assign(m, 0.0);

  if (vf.mode == ShapleyMode::PermutationSampling) {
    if (with_interactions) {
      fail(ErrorKind::InvalidArgument, "interaction values need exact enumeration");
    }
    if (vf.n_permutations == 0) fail(ErrorKind::InvalidArgument, "n_permutations must be positive");
    r.base_value = value_of_subset(vf, x, 0);
    r.sample_prediction = detail::predict_one(vf.predictor, x);
    Rng rng = derive_rng(vf.seed, {stream::kPermutation});
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t p = 0; p < vf.n_permutations; ++p) {
      std::shuffle(order.begin(), order.end(), rng);
      std::uint64_t mask = 0;
      double prev = r.base_value;
      for (std::size_t k = 0; k < m; ++k) {
        mask |= std::uint64_t{1} << order[k];
        const double cur = value_of_subset(vf, x, mask);
        r.phi[order[k]] += cur - prev;
        prev = cur;
      }
    }
    for (double& v : r.phi) v /= static_cast<double>(vf.n_permutations);
    return r;
  }

  const std::vector<double> f = detail::subset_values(vf, x);
  const std::size_t full = (std::size_t{1} << m) - 1;
  r.base_value = f[0];
  r.sample_prediction = detail::predict_one(vf.predictor, x);

  std::vector<double> w1(m), w2(m > 1 ? m - 1 : 1);
  const double fm = detail::factorial(m);
  for (std::size_t s = 0; s < m; ++s) w1[s] = detail::factorial(s) * detail::factorial(m - s - 1) / fm;
  if (m > 1) {
    const double fm1 = detail::factorial(m - 1);
    for (std::size_t s = 0; s + 2 <= m; ++s) {
      w2[s] = detail::factorial(s) * detail::factorial(m - s - 2) / (2.0 * fm1);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double acc = 0.0;
    for (std::size_t s = 0; s <= full; ++s) {
      if (s & bit) continue;
      acc += w1[static_cast<std::size_t>(std::popcount(s))] * (f[s | bit] - f[s]);
    }
    r.phi[i] = acc;
  }
  if (with_interactions) {
    InteractionTable t(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) {
        const std::size_t bi = std::size_t{1} << i, bj = std::size_t{1} << j;
        double acc = 0.0;
        for (std::size_t s = 0; s <= full; ++s) {
          if (s & (bi | bj)) continue;
          acc += w2[static_cast<std::size_t>(std::popcount(s))] *
                 ((f[s | bi | bj] - f[s | bj]) - (f[s | bi] - f[s]));
        }
        t(i, j) = t(j, i) = acc;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      double off = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != i) off += t(i, j);
      }
      t(i, i) = r.phi[i] - off;
    }
    r.interactions = std::move(t);
  }
  return r;
}

inline ShapleyResult shapley_values(const ValueFunction& vf, std::span<const double> x) {
  return explain_sample(vf, x, false);
}

inline ShapleyResult shapley_interactions(const ValueFunction& vf, std::span<const double> x) {
  if (vf.mode != ShapleyMode::ExactEnumeration) {
    fail(ErrorKind::InvalidArgument, "interaction values need exact enumeration");
  }
  return explain_sample(vf, x, true);
}

// ---------------------------------------------------------------------------
// Tree ensembles: interventional values in closed form. For one tree, one
// background row b and the sample x, each reachable leaf with value v is hit
// exactly by the hybrids that take x on a feature set R and b on a disjoint
// set N. Its game S -> v [R in S][N disjoint from S] has Shapley values
// v (r-1)! n! / (r+n)! on R and -v r! (n-1)! / (r+n)! on N, and pair
// interactions (r-2)! n! / (r+n-1)! within R, -(r-1)! (n-1)! / (r+n-1)!
// across, r! (n-2)! / (r+n-1)! within N (halved in the table convention).

namespace detail {

class TreeShapAccumulator {
 public:
  TreeShapAccumulator(std::size_t m, bool interactions)
      : m_(m), interactions_(interactions), phi_(m, 0.0), table_(interactions ? m : 0) {
    for (std::size_t k = 0; k <= 2 * kMaxExactFeatures + 2; ++k) fact_.push_back(factorial(k));
  }

  void run(const DecisionTree& tree, std::span<const double> x, std::span<const double> b,
           bool class_one) {
    tree_ = &tree;
    x_ = x;
    b_ = b;
    class_one_ = class_one;
    walk(0, 0, 0);
  }

  std::vector<double>& phi() { return phi_; }
  InteractionTable& table() { return table_; }

 private:
  void walk(std::size_t k, std::uint32_t r_mask, std::uint32_t n_mask) {
    const TreeNode& node = tree_->nodes()[k];
    if (node.is_leaf()) {
      leaf(class_one_ ? node.prob : 1.0 - node.prob, r_mask, n_mask);
      return;
    }
    const auto f = static_cast<std::size_t>(node.feature);
    const std::uint32_t bit = std::uint32_t{1} << f;
    const std::size_t left = static_cast<std::size_t>(node.left);
    const std::size_t right = static_cast<std::size_t>(node.right);
    const std::size_t x_next = x_[f] <= node.threshold ? left : right;
    const std::size_t b_next = b_[f] <= node.threshold ? left : right;
    if (r_mask & bit) {
      walk(x_next, r_mask, n_mask);
    } else if (n_mask & bit) {
      walk(b_next, r_mask, n_mask);
    } else if (x_next == b_next) {
      walk(x_next, r_mask, n_mask);
    } else {
      walk(x_next, r_mask | bit, n_mask);
      walk(b_next, r_mask, n_mask | bit);
    }
  }

  void leaf(double v, std::uint32_t r_mask, std::uint32_t n_mask) {
    const std::size_t r = static_cast<std::size_t>(std::popcount(r_mask));
    const std::size_t n = static_cast<std::size_t>(std::popcount(n_mask));
    if (r + n == 0) return;
    const double in_r = r > 0 ? v * fact_[r - 1] * fact_[n] / fact_[r + n] : 0.0;
    const double in_n = n > 0 ? -v * fact_[r] * fact_[n - 1] / fact_[r + n] : 0.0;
    for (std::uint32_t s = r_mask; s; s &= s - 1) phi_[static_cast<std::size_t>(std::countr_zero(s))] += in_r;
    for (std::uint32_t s = n_mask; s; s &= s - 1) phi_[static_cast<std::size_t>(std::countr_zero(s))] += in_n;
    if (!interactions_ || r + n < 2) return;
    const double rr = r >= 2 ? 0.5 * v * fact_[r - 2] * fact_[n] / fact_[r + n - 1] : 0.0;
    const double rn = r >= 1 && n >= 1 ? -0.5 * v * fact_[r - 1] * fact_[n - 1] / fact_[r + n - 1] : 0.0;
    const double nn = n >= 2 ? 0.5 * v * fact_[r] * fact_[n - 2] / fact_[r + n - 1] : 0.0;
    const std::uint32_t all = r_mask | n_mask;
    for (std::uint32_t s = all; s; s &= s - 1) {
      const auto i = static_cast<std::size_t>(std::countr_zero(s));
      const bool i_r = (r_mask >> i) & 1;
      for (std::uint32_t t = s & (s - 1); t; t &= t - 1) {
        const auto j = static_cast<std::size_t>(std::countr_zero(t));
        const bool j_r = (r_mask >> j) & 1;
        const double w = i_r && j_r ? rr : (!i_r && !j_r ? nn : rn);
        table_(i, j) += w;
        table_(j, i) += w;
      }
    }
  }

  std::size_t m_;
  bool interactions_;
  std::vector<double> phi_;
  InteractionTable table_;
  std::vector<double> fact_;
  const DecisionTree* tree_ = nullptr;
  std::span<const double> x_, b_;
  bool class_one_ = true;
};

}  // namespace detail

/// Exact interventional values of a forest's class probability (class 1 by
/// default), identical to enumerating all subsets with the forest predictor.
inline ShapleyResult forest_shapley(const RandomForest& forest, const FeatureMatrix& background,
                                    std::span<const double> x, bool with_interactions,
                                    bool class_one = true) {
  const std::size_t m = forest.n_features();
  if (background.rows == 0) fail(ErrorKind::EmptyBackground, "background set is empty");
  if (x.size() != m || background.cols != m) fail(ErrorKind::InvalidArgument, "feature count mismatch");
  if (m > 32) fail(ErrorKind::SubsetBudgetExceeded, "tree path supports at most 32 features");
  detail::TreeShapAccumulator acc(m, with_interactions);
  double base = 0.0;
  for (std::size_t b = 0; b < background.rows; ++b) {
    const double p = forest.predict_proba(background.row(b));
    base += class_one ? p : 1.0 - p;
    for (const DecisionTree& t : forest.trees()) acc.run(t, x, background.row(b), class_one);
  }
  const double scale = 1.0 / (static_cast<double>(background.rows) * static_cast<double>(forest.trees().size()));
  ShapleyResult r;
  r.phi = std::move(acc.phi());
  for (double& v : r.phi) v *= scale;
  r.base_value = base / static_cast<double>(background.rows);
  const double px = forest.predict_proba(x);
  r.sample_prediction = class_one ? px : 1.0 - px;
  if (with_interactions) {
    InteractionTable t = std::move(acc.table());
    for (double& v : t.v) v *= scale;
    for (std::size_t i = 0; i < m; ++i) {
      double off = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != i) off += t(i, j);
      }
      t(i, i) = r.phi[i] - off;
    }
    r.interactions = std::move(t);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Predictors

inline BatchPredictor forest_predictor(const RandomForest& forest, bool class_one = true) {
  return [&forest, class_one](const FeatureMatrix& rows, std::span<double> out) {
    for (std::size_t i = 0; i < rows.rows; ++i) {
      const double p = forest.predict_proba(rows.row(i));
      out[i] = class_one ? p : 1.0 - p;
    }
  };
}

inline BatchPredictor mlp_predictor(const MlpParams& params) {
  return [&params](const FeatureMatrix& rows, std::span<double> out) {
    const std::vector<double> y = predict_concurrence(params, rows);
    std::copy(y.begin(), y.end(), out.begin());
  };
}

/// Concurrence of the physical projection of the linear-inversion estimate.
/// The projection only clips and rescales eigenvalues, so its spectrum feeds
/// the concurrence directly and one eigendecomposition suffices.
inline double analytic_concurrence(std::span<const double> m) {
  MeasurementVector v;
  std::copy(m.begin(), m.end(), v.m.begin());
  Spectrum s = hermitian_eigen(reconstruct(v));
  double total = 0.0;
  for (double l : s.eigenvalues) total += std::max(l, 0.0);
  if (!(total > 1e-300)) fail(ErrorKind::ZeroTrace, "all eigenvalues clipped to zero");
  for (double& l : s.eigenvalues) l = std::max(l, 0.0) / total;
  return detail::concurrence_from_spectrum(s);
}

inline BatchPredictor analytic_predictor() {
  return [](const FeatureMatrix& rows, std::span<double> out) {
    for (std::size_t i = 0; i < rows.rows; ++i) out[i] = analytic_concurrence(rows.row(i));
  };
}

// ---------------------------------------------------------------------------
// Global aggregates

struct GlobalShapley {
  std::vector<double> mean_phi;                 // signed mean over samples
  std::vector<double> mean_abs_phi;
  std::optional<InteractionTable> mean_interactions;
  std::size_t n_samples = 0;
};

/// Signed and absolute means of per-sample results.
inline GlobalShapley summarize_shapley(const std::vector<ShapleyResult>& results) {
  if (results.empty()) fail(ErrorKind::EmptyInput, "no samples to explain");
  GlobalShapley g;
  const std::size_t m = results.front().phi.size();
  g.n_samples = results.size();
  g.mean_phi.assign(m, 0.0);
  g.mean_abs_phi.assign(m, 0.0);
  if (results.front().interactions) g.mean_interactions = InteractionTable(m);
  for (const ShapleyResult& r : results) {
    for (std::size_t i = 0; i < m; ++i) {
      g.mean_phi[i] += r.phi[i];
      g.mean_abs_phi[i] += std::abs(r.phi[i]);
    }
    if (g.mean_interactions) {
      for (std::size_t k = 0; k < m * m; ++k) g.mean_interactions->v[k] += r.interactions->v[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(results.size());
  for (double& v : g.mean_phi) v *= inv;
  for (double& v : g.mean_abs_phi) v *= inv;
  if (g.mean_interactions) {
    for (double& v : g.mean_interactions->v) v *= inv;
  }
  return g;
}

/// Explains every row in parallel (`explain_one(row)`), results in row order.
inline std::vector<ShapleyResult> explain_rows(const FeatureMatrix& samples,
                                               const std::function<ShapleyResult(std::span<const double>)>& explain_one,
                                               std::size_t threads = 1) {
  if (samples.rows == 0) fail(ErrorKind::EmptyInput, "no samples to explain");
  std::vector<ShapleyResult> results(samples.rows);
  parallel_for(samples.rows, threads, [&](std::size_t i) { results[i] = explain_one(samples.row(i)); });
  return results;
}

inline GlobalShapley aggregate_shapley(const FeatureMatrix& samples,
                                       const std::function<ShapleyResult(std::span<const double>)>& explain_one,
                                       std::size_t threads = 1) {
  return summarize_shapley(explain_rows(samples, explain_one, threads));
}

inline GlobalShapley global_shapley(const ValueFunction& vf, const FeatureMatrix& samples,
                                    bool with_interactions = false, std::size_t threads = 1) {
  return aggregate_shapley(
      samples, [&](std::span<const double> x) { return explain_sample(vf, x, with_interactions); }, threads);
}

/// `count` rows drawn uniformly without replacement from stream (seed, tag).
inline FeatureMatrix sample_rows(const FeatureMatrix& x, std::size_t count, std::uint64_t seed,
                                 std::uint64_t tag = stream::kBackground) {
  if (x.rows == 0) fail(ErrorKind::EmptyInput, "cannot sample rows from an empty table");
  count = std::min(count, x.rows);
  std::vector<std::size_t> idx(x.rows);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = derive_rng(seed, {tag});
  for (std::size_t k = 0; k < count; ++k) {
    std::swap(idx[k], idx[k + std::uniform_int_distribution<std::size_t>(0, x.rows - 1 - k)(rng)]);
  }
  FeatureMatrix out(count, x.cols);
  for (std::size_t k = 0; k < count; ++k) {
    std::copy(x.row(idx[k]).begin(), x.row(idx[k]).end(), out.row(k).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  std::vector<std::vector<double>> components;  // rows, orthonormal
  std::vector<double> explained_variance_ratio;  // descending
  std::vector<double> cumulative;

  /// Smallest j (1-based) with cumulative ratio >= level.
  std::size_t components_for(double level) const {
    for (std::size_t j = 0; j < cumulative.size(); ++j) {
      if (cumulative[j] >= level) return j + 1;
    }
    return cumulative.size();
  }
};

inline PcaResult pca(const FeatureMatrix& data) {
  if (data.rows < 2) fail(ErrorKind::EmptyInput, "PCA needs at least two samples");
  const std::size_t d = data.cols;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
  }
  for (double& v : mean) v /= static_cast<double>(data.rows);
  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < data.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = data(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += centered[a] * centered[b];
    }
  }
  ComplexMatrix c(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      const double v = cov[a * d + b] / static_cast<double>(data.rows - 1);
      c(a, b) = v;
      c(b, a) = v;
    }
  }
  const Spectrum s = hermitian_eigen(c);
  double total = 0.0;
  for (double l : s.eigenvalues) total += std::max(l, 0.0);
  if (!(total > 0.0)) fail(ErrorKind::DegenerateData, "data has zero total variance");
  PcaResult r;
  double running = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double ratio = std::max(s.eigenvalues[k], 0.0) / total;
    r.explained_variance_ratio.push_back(ratio);
    running += ratio;
    r.cumulative.push_back(running);
    std::vector<double> dir(d);
    for (std::size_t j = 0; j < d; ++j) dir[j] = s.eigenvectors(j, k).real();
    r.components.push_back(std::move(dir));
  }
  return r;
}

}  // namespace qent
