#pragma once

// Classification and regression metrics, accuracy by concurrence, and the
// single-measurement perturbation experiments for both model families.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "qent/errors.hpp"
#include "qent/forest.hpp"
#include "qent/mlp.hpp"
#include "qent/parallel.hpp"
#include "qent/rng.hpp"
#include "qent/sampler.hpp"

namespace qent {

struct ClassificationThresholds {
  double tau = kEntanglementThreshold;
  double tau_nn = 0.03;

  void validate() const {
    if (!(0.0 < tau && tau < tau_nn && tau_nn < 1.0)) {
      fail(ErrorKind::InvalidConfig, "thresholds must satisfy 0 < tau < tau_nn < 1");
    }
  }
};

/// Step function with the boundary at 1.
inline int heaviside(double x) { return x >= 0.0 ? 1 : 0; }

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b) {
  if (a == 0) fail(ErrorKind::EmptyInput, "no samples");
  if (a != b) fail(ErrorKind::InvalidArgument, "prediction/truth length mismatch");
}
}  // namespace detail

inline double accuracy_rf(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  detail::check_lengths(predicted.size(), truth.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += (predicted[i] != 0) == (truth[i] != 0);
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Whether a regressed concurrence lands on the same side as the truth.
inline bool nn_correct(double predicted, double truth, const ClassificationThresholds& t) {
  return heaviside(t.tau - truth) == heaviside(t.tau_nn - predicted);
}

inline double accuracy_nn(std::span<const double> predicted, std::span<const double> truth,
                          const ClassificationThresholds& t = {}) {
  detail::check_lengths(predicted.size(), truth.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += nn_correct(predicted[i], truth[i], t);
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline double precision(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  detail::check_lengths(predicted.size(), truth.size());
  std::size_t tp = 0, pp = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pp += predicted[i] != 0;
    tp += predicted[i] != 0 && truth[i] != 0;
  }
  if (pp == 0) fail(ErrorKind::NoPredictedPositives, "no predicted positives");
  return static_cast<double>(tp) / static_cast<double>(pp);
}

inline double recall(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  detail::check_lengths(predicted.size(), truth.size());
  std::size_t tp = 0, ap = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ap += truth[i] != 0;
    tp += predicted[i] != 0 && truth[i] != 0;
  }
  if (ap == 0) fail(ErrorKind::NoActualPositives, "no actual positives");
  return static_cast<double>(tp) / static_cast<double>(ap);
}

inline double rmse(std::span<const double> predicted, std::span<const double> truth) {
  detail::check_lengths(predicted.size(), truth.size());
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(truth.size()));
}

/// Class labels from regressed concurrences.
inline std::vector<std::uint8_t> classify_nn(std::span<const double> predicted, double tau_nn) {
  std::vector<std::uint8_t> out(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) out[i] = heaviside(tau_nn - predicted[i]) ? 0 : 1;
  return out;
}

/// Truth labels with the same boundary convention as the regression score.
inline std::vector<std::uint8_t> classify_truth(std::span<const double> c, double tau) {
  std::vector<std::uint8_t> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = heaviside(tau - c[i]) ? 0 : 1;
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy by true concurrence

struct BinAccuracy {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
};

/// Half-open bins [edges[k], edges[k+1]), the last one closed. Empty bins are
/// left out.
inline std::vector<BinAccuracy> accuracy_vs_concurrence(std::span<const std::uint8_t> correct,
                                                        std::span<const double> concurrence,
                                                        std::span<const double> edges) {
  detail::check_lengths(correct.size(), concurrence.size());
  if (edges.size() < 2) fail(ErrorKind::InvalidArgument, "need at least two bin edges");
  std::vector<BinAccuracy> bins;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    BinAccuracy b{edges[k], edges[k + 1], 0, 0.0};
    std::size_t hit = 0;
    const bool last = k + 2 == edges.size();
    for (std::size_t i = 0; i < concurrence.size(); ++i) {
      const double c = concurrence[i];
      if (c >= b.lo && (c < b.hi || (last && c <= b.hi))) {
        ++b.count;
        hit += correct[i] != 0;
      }
    }
    if (b.count == 0) continue;
    b.accuracy = static_cast<double>(hit) / static_cast<double>(b.count);
    bins.push_back(b);
  }
  return bins;
}

/// Separable samples first as their own bin, then linear bins of `width`
/// over (tau, 1].
inline std::vector<double> concurrence_bin_edges(double width = 0.05) {
  std::vector<double> edges{0.0, kEntanglementThreshold};
  const auto n = static_cast<std::size_t>(std::llround(1.0 / width));
  for (std::size_t k = 1; k <= n; ++k) edges.push_back(static_cast<double>(k) * width);
  return edges;
}

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double rmse = 0.0;
  std::vector<BinAccuracy> per_bin;
};

inline std::vector<std::uint8_t> forest_predictions(const RandomForest& f, const FeatureMatrix& x,
                                                    std::size_t threads = 1) {
  const std::vector<double> p = f.predict_proba(x, threads);
  std::vector<std::uint8_t> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
  return out;
}

/// RMSE for a classifier compares the class-1 probability with the label.
inline MetricReport evaluate_forest(const RandomForest& f, const FeatureMatrix& x,
                                    std::span<const double> concurrence,
                                    const ClassificationThresholds& t = {}, std::size_t threads = 1) {
  const std::vector<double> p = f.predict_proba(x, threads);
  std::vector<std::uint8_t> pred(p.size()), truth(p.size()), correct(p.size());
  std::vector<double> truth_real(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    pred[i] = p[i] >= 0.5 ? 1 : 0;
    truth[i] = concurrence[i] >= t.tau ? 1 : 0;
    truth_real[i] = truth[i];
    correct[i] = pred[i] == truth[i];
  }
  MetricReport r;
  r.accuracy = accuracy_rf(pred, truth);
  r.precision = precision(pred, truth);
  r.recall = recall(pred, truth);
  r.rmse = rmse(p, truth_real);
  r.per_bin = accuracy_vs_concurrence(correct, concurrence, concurrence_bin_edges());
  return r;
}

inline MetricReport evaluate_mlp(const MlpParams& params, const FeatureMatrix& x,
                                 std::span<const double> concurrence,
                                 const ClassificationThresholds& t = {}) {
  const std::vector<double> c_hat = predict_concurrence(params, x);
  const auto pred = classify_nn(c_hat, t.tau_nn);
  const auto truth = classify_truth(concurrence, t.tau);
  std::vector<std::uint8_t> correct(c_hat.size());
  for (std::size_t i = 0; i < c_hat.size(); ++i) correct[i] = nn_correct(c_hat[i], concurrence[i], t);
  MetricReport r;
  r.accuracy = accuracy_nn(c_hat, concurrence, t);
  r.precision = precision(pred, truth);
  r.recall = recall(pred, truth);
  r.rmse = rmse(c_hat, concurrence);
  r.per_bin = accuracy_vs_concurrence(correct, concurrence, concurrence_bin_edges());
  return r;
}

/// Threshold on regressed concurrence that maximizes accuracy on held-out
/// data, scanned over a grid; `fallback` when the data has a single class.
inline double tune_tau_nn(std::span<const double> predicted, std::span<const double> truth,
                          double tau = kEntanglementThreshold, double fallback = 0.03) {
  detail::check_lengths(predicted.size(), truth.size());
  bool any_pos = false, any_neg = false;
  for (double c : truth) (c > tau ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) return fallback;
  double best = fallback;
  double best_acc = -1.0;
  for (int k = 1; k <= 40; ++k) {
    const double candidate = 0.005 * k;
    const double acc = accuracy_nn(predicted, truth, {tau, candidate});
    if (acc > best_acc) {
      best_acc = acc;
      best = candidate;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Perturbation experiments. Each (measurement index, trial) pair owns the rng
// stream (seed, kNoise, index, trial), and each sample gets a fresh uniform
// draw from it in sample order.

struct PerturbationSetup {
  double sigma = 0.05;
  std::size_t n_trials = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

namespace detail {

/// Copies of column i of x with fresh uniform noise in [-sigma, sigma].
inline void perturb_column(const FeatureMatrix& x, std::size_t i, double sigma, Rng& rng,
                           FeatureMatrix& out) {
  out = x;
  if (sigma == 0.0) return;
  std::uniform_real_distribution<double> u(-sigma, sigma);
  for (std::size_t r = 0; r < x.rows; ++r) out(r, i) += u(rng);
}

/// value(i, trial) for every index and trial, computed in parallel.
template <class Fn>
std::vector<double> sweep(std::size_t n_features, const PerturbationSetup& s, Fn&& value) {
  if (s.sigma < 0.0 || !std::isfinite(s.sigma)) fail(ErrorKind::InvalidArgument, "sigma must be >= 0");
  if (s.n_trials == 0) fail(ErrorKind::InvalidArgument, "n_trials must be positive");
  std::vector<double> cells(n_features * s.n_trials);
  if (s.sigma == 0.0) {
    // Nothing is perturbed, so every cell is the clean value.
    std::fill(cells.begin(), cells.end(), value(0, 0));
    return cells;
  }
  parallel_for(cells.size(), s.threads, [&](std::size_t k) {
    const std::size_t i = k / s.n_trials, t = k % s.n_trials;
    cells[k] = value(i, t);
  });
  return cells;
}

inline std::vector<double> mean_over_trials(const std::vector<double>& cells, std::size_t n_trials) {
  std::vector<double> out(cells.size() / n_trials, 0.0);
  for (std::size_t k = 0; k < cells.size(); ++k) out[k / n_trials] += cells[k];
  for (double& v : out) v /= static_cast<double>(n_trials);
  return out;
}

}  // namespace detail

/// Per-index accuracy of the forest under single-entry noise, averaged over trials.
inline std::vector<double> perturbed_accuracy_rf(const RandomForest& f, const FeatureMatrix& x,
                                                 std::span<const std::uint8_t> truth,
                                                 const PerturbationSetup& s) {
  detail::check_lengths(x.rows, truth.size());
  const auto cells = detail::sweep(x.cols, s, [&](std::size_t i, std::size_t t) {
    Rng rng = derive_rng(s.seed, {stream::kNoise, i, t});
    FeatureMatrix noisy;
    detail::perturb_column(x, i, s.sigma, rng, noisy);
    return accuracy_rf(forest_predictions(f, noisy), truth);
  });
  return detail::mean_over_trials(cells, s.n_trials);
}

/// E^P for the forest: mean over trials of |clean accuracy - perturbed accuracy|.
inline std::vector<double> perturbation_importance_rf(const RandomForest& f, const FeatureMatrix& x,
                                                      std::span<const std::uint8_t> truth,
                                                      const PerturbationSetup& s) {
  detail::check_lengths(x.rows, truth.size());
  const double clean = accuracy_rf(forest_predictions(f, x, s.threads), truth);
  const auto cells = detail::sweep(x.cols, s, [&](std::size_t i, std::size_t t) {
    Rng rng = derive_rng(s.seed, {stream::kNoise, i, t});
    FeatureMatrix noisy;
    detail::perturb_column(x, i, s.sigma, rng, noisy);
    return std::abs(clean - accuracy_rf(forest_predictions(f, noisy), truth));
  });
  return detail::mean_over_trials(cells, s.n_trials);
}

/// E^P for the regressor: mean absolute concurrence error under noise.
inline std::vector<double> perturbation_importance_nn(const MlpParams& p, const FeatureMatrix& x,
                                                      std::span<const double> concurrence,
                                                      const PerturbationSetup& s) {
  detail::check_lengths(x.rows, concurrence.size());
  const auto cells = detail::sweep(x.cols, s, [&](std::size_t i, std::size_t t) {
    Rng rng = derive_rng(s.seed, {stream::kNoise, i, t});
    FeatureMatrix noisy;
    detail::perturb_column(x, i, s.sigma, rng, noisy);
    const std::vector<double> c_hat = predict_concurrence(p, noisy);
    double s_abs = 0.0;
    for (std::size_t r = 0; r < c_hat.size(); ++r) s_abs += std::abs(c_hat[r] - concurrence[r]);
    return s_abs / static_cast<double>(c_hat.size());
  });
  return detail::mean_over_trials(cells, s.n_trials);
}

inline std::vector<double> perturbed_accuracy_nn(const MlpParams& p, const FeatureMatrix& x,
                                                 std::span<const double> concurrence,
                                                 const ClassificationThresholds& t,
                                                 const PerturbationSetup& s) {
  detail::check_lengths(x.rows, concurrence.size());
  const auto cells = detail::sweep(x.cols, s, [&](std::size_t i, std::size_t trial) {
    Rng rng = derive_rng(s.seed, {stream::kNoise, i, trial});
    FeatureMatrix noisy;
    detail::perturb_column(x, i, s.sigma, rng, noisy);
    return accuracy_nn(predict_concurrence(p, noisy), concurrence, t);
  });
  return detail::mean_over_trials(cells, s.n_trials);
}

struct SigmaRow {
  double sigma = 0.0;
  double accuracy_rf = 0.0;
  double accuracy_nn = 0.0;
  std::vector<double> per_index_rf;
  std::vector<double> per_index_nn;
};

/// Accuracy of both models under single-entry noise of each amplitude,
/// averaged over the perturbed index and trials. Per-index values are kept.
inline std::vector<SigmaRow> accuracy_vs_sigma(const RandomForest& f, const MlpParams& p,
                                               const FeatureMatrix& x, std::span<const double> concurrence,
                                               std::span<const double> sigmas,
                                               const ClassificationThresholds& t,
                                               std::size_t n_trials, std::uint64_t seed,
                                               std::size_t threads = 1) {
  for (std::size_t k = 1; k < sigmas.size(); ++k) {
    if (!(sigmas[k] > sigmas[k - 1])) fail(ErrorKind::InvalidArgument, "sigmas must be ascending");
  }
  std::vector<std::uint8_t> truth(concurrence.size());
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = concurrence[i] >= t.tau ? 1 : 0;
  std::vector<SigmaRow> rows;
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    // Each amplitude gets its own seed so rows are independent of the grid.
    const std::uint64_t row_seed = splitmix64(seed ^ std::bit_cast<std::uint64_t>(sigmas[k]));
    const PerturbationSetup s{sigmas[k], n_trials, row_seed, threads};
    SigmaRow r;
    r.sigma = sigmas[k];
    r.per_index_rf = perturbed_accuracy_rf(f, x, truth, s);
    r.per_index_nn = perturbed_accuracy_nn(p, x, concurrence, t, s);
    for (double v : r.per_index_rf) r.accuracy_rf += v;
    for (double v : r.per_index_nn) r.accuracy_nn += v;
    r.accuracy_rf /= static_cast<double>(r.per_index_rf.size());
    r.accuracy_nn /= static_cast<double>(r.per_index_nn.size());
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace qent
