#pragma once

// Sixteen-outcome projective two-qubit tomography: forward map, linear
// inversion, physical projection, noise injection and error propagation.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qent/errors.hpp"
#include "qent/parallel.hpp"
#include "qent/qcore.hpp"
#include "qent/rng.hpp"

namespace qent {

inline constexpr std::size_t kNumMeasurements = 16;

constexpr std::size_t measurement_index(std::size_t i, std::size_t j) { return 4 * i + j; }

/// Outcomes m_ij, i the first-qubit projector and j the second, stored
/// row-major (flat index 4 i + j).
struct MeasurementVector {
  std::array<double, kNumMeasurements> m{};

  double& operator[](std::size_t k) { return m[k]; }
  double operator[](std::size_t k) const { return m[k]; }
  double& operator()(std::size_t i, std::size_t j) { return m[measurement_index(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return m[measurement_index(i, j)]; }
  std::span<const double, kNumMeasurements> span() const { return m; }

  friend bool operator==(const MeasurementVector&, const MeasurementVector&) = default;
};

// ---------------------------------------------------------------------------
// Blocks

enum class BlockId : std::uint8_t { A, B, C, D };

inline constexpr std::array<BlockId, 4> kAllBlocks{BlockId::A, BlockId::B, BlockId::C, BlockId::D};

inline char block_name(BlockId b) { return static_cast<char>('A' + static_cast<int>(b)); }

/// Flat measurement indices of a block. A holds the occupation outcomes,
/// B and C the mixed-basis outcomes, D the outcomes sensitive to the
/// non-local coherences.
inline std::array<std::size_t, 4> block_indices(BlockId b) {
  switch (b) {
    case BlockId::A: return {measurement_index(0, 0), measurement_index(0, 1), measurement_index(1, 0), measurement_index(1, 1)};
    case BlockId::B: return {measurement_index(0, 2), measurement_index(0, 3), measurement_index(1, 2), measurement_index(1, 3)};
    case BlockId::C: return {measurement_index(2, 0), measurement_index(2, 1), measurement_index(3, 0), measurement_index(3, 1)};
    case BlockId::D: return {measurement_index(2, 2), measurement_index(2, 3), measurement_index(3, 2), measurement_index(3, 3)};
  }
  return {};
}

inline BlockId block_of(std::size_t flat) {
  const std::size_t i = flat / 4;
  const std::size_t j = flat % 4;
  const bool first_z = i < 2;
  const bool second_z = j < 2;
  if (first_z && second_z) return BlockId::A;
  if (first_z) return BlockId::B;
  if (second_z) return BlockId::C;
  return BlockId::D;
}

/// Mean of a 16-vector over each block, in order A, B, C, D.
inline std::array<double, 4> block_means(std::span<const double> values) {
  std::array<double, 4> out{};
  for (BlockId b : kAllBlocks) {
    double s = 0.0;
    for (std::size_t k : block_indices(b)) s += values[k];
    out[static_cast<std::size_t>(b)] = s / 4.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward map

/// |k><k| for |0>, |1>, |2> = (|0> + |1>)/sqrt2, |3> = (|0> - i|1>)/sqrt2.
inline ComplexMatrix projector(int k) {
  const double h = 1.0 / std::numbers::sqrt2;
  std::array<Complex, 2> v;
  switch (k) {
    case 0: v = {1.0, 0.0}; break;
    case 1: v = {0.0, 1.0}; break;
    case 2: v = {h, h}; break;
    case 3: v = {h, Complex(0.0, -h)}; break;
    default: {
      std::ostringstream msg;
      msg << "projector index " << k << " outside 0..3";
      fail(ErrorKind::IndexOutOfRange, msg.str());
    }
  }
  return ComplexMatrix::outer(v);
}

namespace detail {

inline const std::array<ComplexMatrix, kNumMeasurements>& measurement_operators() {
  static const auto ops = [] {
    std::array<ComplexMatrix, kNumMeasurements> out;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) out[measurement_index(i, j)] = kron(projector(i), projector(j));
    }
    return out;
  }();
  return ops;
}

inline double trace_product_real(const ComplexMatrix& a, const ComplexMatrix& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) s += (a(r, c) * b(c, r)).real();
  }
  return s;
}

}  // namespace detail

/// m_ij = Tr(rho (mu_i (x) mu_j)) with unit normalization; accepts any 4x4
/// Hermitian matrix (the map is linear).
inline MeasurementVector measure_matrix(const ComplexMatrix& rho) {
  MeasurementVector out;
  const auto& ops = detail::measurement_operators();
  for (std::size_t k = 0; k < kNumMeasurements; ++k) out[k] = detail::trace_product_real(rho, ops[k]);
  return out;
}

inline MeasurementVector measure_all(const DensityMatrix& rho) { return measure_matrix(rho.matrix()); }

/// The same outcomes written out element by element in terms of occupations
/// and coherences. Assumes unit trace; kept as an independent route for
/// cross-checking `measure_all`.
inline MeasurementVector measure_closed_form(const DensityMatrix& state) {
  const ComplexMatrix& r = state.matrix();
  auto re = [&](int a, int b) { return r(a, b).real(); };
  auto im = [&](int a, int b) { return r(a, b).imag(); };
  enum { k00 = 0, k01 = 1, k10 = 2, k11 = 3 };
  const double p00 = re(k00, k00), p01 = re(k01, k01), p10 = re(k10, k10), p11 = re(k11, k11);
  MeasurementVector m;
  // occupations
  m(0, 0) = p00;
  m(0, 1) = p01;
  m(1, 0) = p10;
  m(1, 1) = p11;
  // second qubit in the superposition bases
  m(0, 2) = 0.5 * (p00 + p01 + 2.0 * re(k00, k01));
  m(0, 3) = 0.5 * (p00 + p01 + 2.0 * im(k00, k01));
  m(1, 2) = 0.5 * (p10 + p11 + 2.0 * re(k10, k11));
  m(1, 3) = 0.5 * (p10 + p11 + 2.0 * im(k10, k11));
  // first qubit in the superposition bases
  m(2, 0) = 0.5 * (p00 + p10 + 2.0 * re(k00, k10));
  m(2, 1) = 0.5 * (p01 + p11 + 2.0 * re(k01, k11));
  m(3, 0) = 0.5 * (p00 + p10 + 2.0 * im(k00, k10));
  m(3, 1) = 0.5 * (p01 + p11 + 2.0 * im(k01, k11));
  // both qubits in superposition bases
  m(2, 2) = 0.25 * (2.0 * (re(k00, k01) + re(k00, k10) + re(k00, k11) + re(k01, k10) +
                           re(k01, k11) + re(k10, k11)) + 1.0);
  m(2, 3) = 0.25 * (2.0 * (im(k00, k01) + im(k00, k11) - im(k01, k10) + im(k10, k11)) +
                    2.0 * (re(k00, k10) + re(k01, k11)) + 1.0);
  m(3, 2) = 0.25 * (2.0 * (im(k00, k10) + im(k00, k11) + im(k01, k10) + im(k01, k11)) +
                    2.0 * (re(k00, k01) + re(k10, k11)) + 1.0);
  m(3, 3) = 0.25 * (2.0 * (im(k00, k01) + im(k00, k10) + im(k01, k11) + im(k10, k11)) +
                    2.0 * (re(k01, k10) - re(k00, k11)) + 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// Linear inversion

/// Upper-triangle pairs in parameter order: 00-01, 00-10, 00-11, 01-10,
/// 01-11, 10-11.
inline constexpr std::array<std::pair<int, int>, 6> kCoherencePairs{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

/// Real parameter vector theta: 4 diagonals, 6 real parts, 6 imaginary parts.
using StateParameters = std::array<double, 16>;

inline StateParameters pack_parameters(const ComplexMatrix& rho) {
  StateParameters theta{};
  for (int k = 0; k < 4; ++k) theta[k] = rho(k, k).real();
  for (std::size_t p = 0; p < kCoherencePairs.size(); ++p) {
    const auto [a, b] = kCoherencePairs[p];
    theta[4 + p] = rho(a, b).real();
    theta[10 + p] = rho(a, b).imag();
  }
  return theta;
}

inline ComplexMatrix unpack_parameters(std::span<const double, 16> theta) {
  ComplexMatrix rho(4, 4);
  for (int k = 0; k < 4; ++k) rho(k, k) = theta[k];
  for (std::size_t p = 0; p < kCoherencePairs.size(); ++p) {
    const auto [a, b] = kCoherencePairs[p];
    const Complex z(theta[4 + p], theta[10 + p]);
    rho(a, b) = z;
    rho(b, a) = std::conj(z);
  }
  return rho;
}

/// Precomputed inverse of the 16 x 16 real system mapping parameters to
/// outcomes.
class TomographyInverter {
 public:
  static const TomographyInverter& instance() {
    static const TomographyInverter inv;
    return inv;
  }

  double condition_number() const { return condition_; }
  const Eigen::Matrix<double, 16, 16>& forward_matrix() const { return forward_; }
  const Eigen::Matrix<double, 16, 16>& inverse_matrix() const { return inverse_; }

  StateParameters solve(const MeasurementVector& m) const {
    const Eigen::Map<const Eigen::Matrix<double, 16, 1>> rhs(m.m.data());
    const Eigen::Matrix<double, 16, 1> theta = inverse_ * rhs;
    StateParameters out;
    for (int k = 0; k < 16; ++k) out[k] = theta[k];
    return out;
  }

 private:
  TomographyInverter() {
    for (int col = 0; col < 16; ++col) {
      StateParameters unit{};
      unit[col] = 1.0;
      const MeasurementVector m = measure_matrix(unpack_parameters(unit));
      for (int row = 0; row < 16; ++row) forward_(row, col) = m[row];
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 16, 16>> svd(forward_);
    const auto& s = svd.singularValues();
    if (s[15] < 1e-12 * s[0]) {
      std::ostringstream msg;
      msg << "tomography matrix is singular, sigma_min = " << s[15];
      fail(ErrorKind::SingularSystem, msg.str());
    }
    condition_ = s[0] / s[15];
    inverse_ = forward_.fullPivLu().inverse();
  }

  Eigen::Matrix<double, 16, 16> forward_;
  Eigen::Matrix<double, 16, 16> inverse_;
  double condition_ = 0.0;
};

/// Linear-inversion estimate; Hermitian but not necessarily positive or
/// unit trace when `m` is noisy.
inline ComplexMatrix reconstruct(const MeasurementVector& m) {
  const StateParameters theta = TomographyInverter::instance().solve(m);
  return unpack_parameters(theta);
}

/// Clips negative eigenvalues and renormalizes the trace.
inline DensityMatrix project_to_physical(const ComplexMatrix& raw) {
  const Spectrum s = hermitian_eigen(raw);
  double total = 0.0;
  for (double l : s.eigenvalues) total += std::max(l, 0.0);
  if (!(total > 1e-300)) fail(ErrorKind::ZeroTrace, "all eigenvalues clipped to zero");
  ComplexMatrix rho = spectral_map(s, [&](double l) { return std::max(l, 0.0) / total; });
  // Remove rounding asymmetry before validation.
  for (std::size_t r = 0; r < 4; ++r) {
    rho(r, r) = rho(r, r).real();
    for (std::size_t c = r + 1; c < 4; ++c) rho(c, r) = std::conj(rho(r, c));
  }
  return validate_density_matrix(rho, 1e-9);
}

// ---------------------------------------------------------------------------
// Noise

enum class NoiseKind : std::uint8_t { UniformSymmetric, Gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::UniformSymmetric;
  double sigma = 0.0;
  /// Flat index of the single perturbed outcome, or nullopt for all outcomes.
  std::optional<std::size_t> target;

  static NoiseSpec single(NoiseKind kind, double sigma, std::size_t i, std::size_t j) {
    return {kind, sigma, measurement_index(i, j)};
  }
  static NoiseSpec all(NoiseKind kind, double sigma) { return {kind, sigma, std::nullopt}; }
};

inline void validate(const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma)) {
    fail(ErrorKind::InvalidArgument, "noise sigma must be finite and >= 0");
  }
  if (spec.target && *spec.target >= kNumMeasurements) {
    fail(ErrorKind::IndexOutOfRange, "noise target outside the 16 outcomes");
  }
}

inline double draw_noise(NoiseKind kind, double sigma, Rng& rng) {
  if (sigma == 0.0) return 0.0;
  if (kind == NoiseKind::UniformSymmetric) {
    return std::uniform_real_distribution<double>(-sigma, sigma)(rng);
  }
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

/// Additive noise on the targeted outcomes; no clamping to [0, 1].
inline MeasurementVector perturb(const MeasurementVector& m, const NoiseSpec& spec, Rng& rng) {
  validate(spec);
  MeasurementVector out = m;
  if (spec.target) {
    out[*spec.target] += draw_noise(spec.kind, spec.sigma, rng);
  } else {
    for (double& v : out.m) v += draw_noise(spec.kind, spec.sigma, rng);
  }
  return out;
}

/// maps[k][4 r + c]: mean over states and trials of |reconstruct(m~) - rho|
/// at entry (r, c) when only outcome k is perturbed.
using ErrorMaps = std::array<std::array<double, 16>, kNumMeasurements>;

inline ErrorMaps error_propagation_map(std::span<const DensityMatrix> states, double sigma,
                                       std::size_t n_trials, std::uint64_t seed,
                                       NoiseKind kind = NoiseKind::Gaussian,
                                       std::size_t threads = 1) {
  if (states.empty()) fail(ErrorKind::EmptyInput, "error_propagation_map needs states");
  if (!(sigma > 0.0)) fail(ErrorKind::InvalidArgument, "sigma must be positive");
  if (n_trials == 0) fail(ErrorKind::InvalidArgument, "n_trials must be positive");
  std::vector<MeasurementVector> clean(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) clean[s] = measure_all(states[s]);

  ErrorMaps maps{};
  parallel_for(kNumMeasurements, threads, [&](std::size_t k) {
    std::array<double, 16> acc{};
    for (std::size_t s = 0; s < states.size(); ++s) {
      Rng rng = derive_rng(seed, {stream::kNoise, k, s});
      const NoiseSpec spec{kind, sigma, k};
      for (std::size_t t = 0; t < n_trials; ++t) {
        const ComplexMatrix diff = reconstruct(perturb(clean[s], spec, rng)) - states[s].matrix();
        for (std::size_t e = 0; e < 16; ++e) acc[e] += std::abs(diff.data()[e]);
      }
    }
    const double norm = 1.0 / static_cast<double>(states.size() * n_trials);
    for (std::size_t e = 0; e < 16; ++e) maps[k][e] = acc[e] * norm;
  });
  return maps;
}

}  // namespace qent
