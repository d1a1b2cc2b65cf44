#pragma once

// Fully connected concurrence regressor 16 -> 128 -> 128 -> 1 with ReLU
// hidden layers, a linear output clipped to [0, 1] at inference, MSE loss
// and Adam or momentum SGD.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qent/binary_io.hpp"
#include "qent/errors.hpp"
#include "qent/forest.hpp"
#include "qent/rng.hpp"

namespace qent {

struct MlpParams {
  Eigen::MatrixXd w1, w2, w3;  // (h x in), (h x h), (1 x h)
  Eigen::VectorXd b1, b2, b3;

  std::size_t inputs() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }

  static MlpParams zeros(std::size_t in, std::size_t h) {
    const auto n = static_cast<Eigen::Index>(in);
    const auto m = static_cast<Eigen::Index>(h);
    return {Eigen::MatrixXd::Zero(m, n), Eigen::MatrixXd::Zero(m, m), Eigen::MatrixXd::Zero(1, m),
            Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(1)};
  }

  /// Visits every parameter block in a fixed order.
  template <class Fn>
  void for_each_block(Fn&& fn) {
    fn(w1); fn(b1); fn(w2); fn(b2); fn(w3); fn(b3);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    fn(w1); fn(b1); fn(w2); fn(b2); fn(w3); fn(b3);
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const auto& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.w1 == b.w1 && a.w2 == b.w2 && a.w3 == b.w3 && a.b1 == b.b1 && a.b2 == b.b2 &&
           a.b3 == b.b3;
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(std::uint64_t seed, std::size_t inputs = 16, std::size_t hidden = 128) {
  if (inputs == 0 || hidden == 0) fail(ErrorKind::InvalidArgument, "layer sizes must be positive");
  MlpParams p = MlpParams::zeros(inputs, hidden);
  Rng rng = derive_rng(seed, {stream::kMlpInit});
  auto fill = [&](Eigen::MatrixXd& w) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
    }
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w3);
  return p;
}

/// Output before clipping, for a batch stored one sample per column.
inline Eigen::RowVectorXd forward_raw(const MlpParams& p, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd h1 = ((p.w1 * x).colwise() + p.b1).cwiseMax(0.0);
  const Eigen::MatrixXd h2 = ((p.w2 * h1).colwise() + p.b2).cwiseMax(0.0);
  return (p.w3 * h2).array() + p.b3(0);
}

inline double forward(const MlpParams& p, std::span<const double> x) {
  if (x.size() != p.inputs()) fail(ErrorKind::InvalidArgument, "input size mismatch");
  for (double v : x) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "non-finite network input");
  }
  const Eigen::Map<const Eigen::VectorXd> col(x.data(), static_cast<Eigen::Index>(x.size()));
  return std::clamp(forward_raw(p, col)(0), 0.0, 1.0);
}

inline double predict_concurrence(const MlpParams& p, std::span<const double> x) { return forward(p, x); }

/// Columns of x are samples.
inline Eigen::MatrixXd to_columns(const FeatureMatrix& x) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.cols), static_cast<Eigen::Index>(x.rows));
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = x(i, j);
    }
  }
  return out;
}

inline std::vector<double> predict_concurrence(const MlpParams& p, const FeatureMatrix& x) {
  for (double v : x.values) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "non-finite network input");
  }
  std::vector<double> out(x.rows);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < x.rows; start += kChunk) {
    const std::size_t n = std::min(kChunk, x.rows - start);
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(x.cols), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < x.cols; ++j) {
        cols(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = x(start + i, j);
      }
    }
    const Eigen::RowVectorXd y = forward_raw(p, cols);
    for (std::size_t i = 0; i < n; ++i) out[start + i] = std::clamp(y(static_cast<Eigen::Index>(i)), 0.0, 1.0);
  }
  return out;
}

struct LossAndGradients {
  double loss;
  MlpParams grads;
};

/// Mean squared error of the unclipped output and its exact gradient.
inline LossAndGradients loss_and_gradients(const MlpParams& p, const Eigen::MatrixXd& x,
                                           const Eigen::RowVectorXd& target) {
  const Eigen::Index n = x.cols();
  if (n == 0) fail(ErrorKind::EmptyInput, "empty batch");
  const Eigen::MatrixXd z1 = (p.w1 * x).colwise() + p.b1;
  const Eigen::MatrixXd h1 = z1.cwiseMax(0.0);
  const Eigen::MatrixXd z2 = (p.w2 * h1).colwise() + p.b2;
  const Eigen::MatrixXd h2 = z2.cwiseMax(0.0);
  const Eigen::RowVectorXd y = (p.w3 * h2).array() + p.b3(0);
  const Eigen::RowVectorXd err = y - target;
  const double loss = err.squaredNorm() / static_cast<double>(n);

  const Eigen::RowVectorXd d_out = err * (2.0 / static_cast<double>(n));
  LossAndGradients r{loss, MlpParams{}};
  MlpParams& g = r.grads;
  g.w3 = d_out * h2.transpose();
  g.b3 = Eigen::VectorXd::Constant(1, d_out.sum());
  const Eigen::MatrixXd d2 = (p.w3.transpose() * d_out).cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
  g.w2 = d2 * h1.transpose();
  g.b2 = d2.rowwise().sum();
  const Eigen::MatrixXd d1 = (p.w2.transpose() * d2).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  g.w1 = d1 * x.transpose();
  g.b1 = d1.rowwise().sum();
  return r;
}

enum class OptimizerKind : std::uint8_t { Adam, SgdMomentum };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
  double validation_fraction = 0.1;
  std::size_t hidden = 128;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    fail(ErrorKind::InvalidConfig, "learning_rate must be positive");
  }
  if (c.batch_size == 0) fail(ErrorKind::InvalidConfig, "batch_size must be positive");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 0.5)) {
    fail(ErrorKind::InvalidConfig, "validation_fraction must lie in [0, 0.5)");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.epsilon > 0.0)) {
    fail(ErrorKind::InvalidConfig, "Adam coefficients out of range");
  }
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail(ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
  if (c.hidden == 0) fail(ErrorKind::InvalidConfig, "hidden width must be positive");
}

struct EpochRecord {
  std::size_t epoch;
  double train_loss;      // mean batch loss over the epoch (NaN for epoch 0)
  double validation_rmse;
};

struct TrainResult {
  MlpParams params;
  std::size_t best_epoch = 0;
  double best_validation_rmse = 0.0;
  std::vector<EpochRecord> curve;
  std::vector<std::size_t> validation_rows;  // indices into the training table
};

inline double rmse_of(const MlpParams& p, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& c) {
  if (x.cols() == 0) return 0.0;
  const Eigen::RowVectorXd y = forward_raw(p, x).cwiseMax(0.0).cwiseMin(1.0);
  return std::sqrt((y - c).squaredNorm() / static_cast<double>(x.cols()));
}

/// Mini-batch training. The validation split and the per-epoch shuffles come
/// from seed-derived streams; the returned parameters are those with the
/// lowest validation RMSE, the initial parameters counting as epoch 0.
inline TrainResult train(const FeatureMatrix& x, std::span<const double> c, const TrainConfig& config) {
  validate(config);
  if (x.rows == 0 || c.size() != x.rows) fail(ErrorKind::EmptyInput, "training set is empty or ragged");
  const std::size_t n = x.rows;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = derive_rng(config.seed, {stream::kMlpSplit});
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n)));
  const std::size_t n_train = n - n_val;
  if (n_train == 0) fail(ErrorKind::EmptyInput, "no training rows after the validation split");

  auto gather = [&](std::size_t from, std::size_t to, Eigen::MatrixXd& xs, Eigen::RowVectorXd& cs) {
    xs.resize(static_cast<Eigen::Index>(x.cols), static_cast<Eigen::Index>(to - from));
    cs.resize(static_cast<Eigen::Index>(to - from));
    for (std::size_t k = from; k < to; ++k) {
      const auto col = static_cast<Eigen::Index>(k - from);
      for (std::size_t j = 0; j < x.cols; ++j) xs(static_cast<Eigen::Index>(j), col) = x(order[k], j);
      cs(col) = c[order[k]];
    }
  };
  Eigen::MatrixXd x_train, x_val;
  Eigen::RowVectorXd c_train, c_val;
  gather(0, n_train, x_train, c_train);
  gather(n_train, n, x_val, c_val);
  // With no validation rows, model selection falls back to the training set.
  const Eigen::MatrixXd& sel_x = n_val > 0 ? x_val : x_train;
  const Eigen::RowVectorXd& sel_c = n_val > 0 ? c_val : c_train;

  TrainResult result;
  result.validation_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  MlpParams p = init_params(config.seed, x.cols, config.hidden);
  result.params = p;
  result.best_validation_rmse = rmse_of(p, sel_x, sel_c);
  result.curve.push_back({0, std::nan(""), result.best_validation_rmse});

  MlpParams m1 = MlpParams::zeros(x.cols, config.hidden);
  MlpParams m2 = m1;
  std::size_t step = 0;
  std::vector<Eigen::Index> perm(n_train);
  Eigen::MatrixXd xb;
  Eigen::RowVectorXd cb;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    Rng epoch_rng = derive_rng(config.seed, {stream::kMlpEpoch, epoch});
    std::shuffle(perm.begin(), perm.end(), epoch_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n_train - start);
      xb.resize(x_train.rows(), static_cast<Eigen::Index>(b));
      cb.resize(static_cast<Eigen::Index>(b));
      for (std::size_t k = 0; k < b; ++k) {
        xb.col(static_cast<Eigen::Index>(k)) = x_train.col(perm[start + k]);
        cb(static_cast<Eigen::Index>(k)) = c_train(perm[start + k]);
      }
      LossAndGradients lg = loss_and_gradients(p, xb, cb);
      if (!std::isfinite(lg.loss)) {
        fail(ErrorKind::DivergedLoss, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      loss_sum += lg.loss;
      ++batches;
      ++step;
      if (config.optimizer == OptimizerKind::Adam) {
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
        auto update = [&](auto& w, auto& g, auto& m, auto& v) {
          m = config.beta1 * m + (1.0 - config.beta1) * g;
          v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
          w.array() -= config.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + config.epsilon);
        };
        update(p.w1, lg.grads.w1, m1.w1, m2.w1);
        update(p.b1, lg.grads.b1, m1.b1, m2.b1);
        update(p.w2, lg.grads.w2, m1.w2, m2.w2);
        update(p.b2, lg.grads.b2, m1.b2, m2.b2);
        update(p.w3, lg.grads.w3, m1.w3, m2.w3);
        update(p.b3, lg.grads.b3, m1.b3, m2.b3);
      } else {
        auto update = [&](auto& w, auto& g, auto& v) {
          v = config.momentum * v - config.learning_rate * g;
          w += v;
        };
        update(p.w1, lg.grads.w1, m1.w1);
        update(p.b1, lg.grads.b1, m1.b1);
        update(p.w2, lg.grads.w2, m1.w2);
        update(p.b2, lg.grads.b2, m1.b2);
        update(p.w3, lg.grads.w3, m1.w3);
        update(p.b3, lg.grads.b3, m1.b3);
      }
    }
    if (!p.all_finite()) {
      fail(ErrorKind::DivergedLoss, "parameters became non-finite at epoch " + std::to_string(epoch));
    }
    const double val = rmse_of(p, sel_x, sel_c);
    result.curve.push_back({epoch, loss_sum / static_cast<double>(batches), val});
    if (val < result.best_validation_rmse) {
      result.best_validation_rmse = val;
      result.best_epoch = epoch;
      result.params = p;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence: magic, version, input and hidden sizes, then w1, b1, w2, b2,
// w3, b3 as row-major doubles.

inline constexpr std::string_view kMlpMagic = "QMLP";
inline constexpr std::uint32_t kMlpFormatVersion = 1;

inline void save_params(std::ostream& out, const MlpParams& p) {
  bin::write_magic(out, kMlpMagic);
  bin::write<std::uint32_t>(out, kMlpFormatVersion);
  bin::write<std::uint64_t>(out, p.inputs());
  bin::write<std::uint64_t>(out, p.hidden());
  p.for_each_block([&](const auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) bin::write<double>(out, m(r, c));
    }
  });
  if (!out) fail(ErrorKind::IoFailure, "failed writing network parameters");
}

inline MlpParams load_params(std::istream& in) {
  bin::expect_magic(in, kMlpMagic);
  const auto version = bin::read<std::uint32_t>(in);
  if (version != kMlpFormatVersion) fail(ErrorKind::FormatError, "unsupported network format version");
  const auto inputs = bin::read<std::uint64_t>(in);
  const auto hidden = bin::read<std::uint64_t>(in);
  if (inputs == 0 || hidden == 0 || inputs > 4096 || hidden > 4096) {
    fail(ErrorKind::FormatError, "implausible layer sizes");
  }
  MlpParams p = MlpParams::zeros(inputs, hidden);
  p.for_each_block([&](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = bin::read<double>(in);
    }
  });
  if (!p.all_finite()) fail(ErrorKind::FormatError, "non-finite parameters in file");
  return p;
}

inline void save_params(const std::string& path, const MlpParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path);
  save_params(out, p);
}

inline MlpParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path);
  return load_params(in);
}

}  // namespace qent
