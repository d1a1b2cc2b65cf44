#pragma once

// Seeded random two-qubit states and balanced, concurrence-labelled datasets.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qent/errors.hpp"
#include "qent/parallel.hpp"
#include "qent/qcore.hpp"
#include "qent/rng.hpp"

namespace qent {

/// States with concurrence >= this are labelled entangled.
inline constexpr double kEntanglementThreshold = 1e-6;

enum class SourceKind : std::uint8_t { HaarPure, GinibreMixed, Circuit, BellRandomized };

inline std::string_view to_string(SourceKind s) {
  switch (s) {
    case SourceKind::HaarPure: return "haar";
    case SourceKind::GinibreMixed: return "ginibre";
    case SourceKind::Circuit: return "circuit";
    case SourceKind::BellRandomized: return "bell";
  }
  return "?";
}

struct Source {
  SourceKind kind = SourceKind::HaarPure;
  int rank = 0;  // GinibreMixed only

  friend bool operator==(const Source&, const Source&) = default;
};

struct LabeledState {
  DensityMatrix rho;
  double concurrence;
  bool entangled;
  Source source;
};

inline LabeledState label_state(DensityMatrix rho, Source source) {
  const double c = concurrence(rho);
  return LabeledState{std::move(rho), c, c >= kEntanglementThreshold, source};
}

// ---------------------------------------------------------------------------
// Primitive samplers

namespace detail {

inline Complex complex_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

/// Haar-random 2x2 unitary: Gram-Schmidt on a complex Ginibre matrix (the
/// R factor then has a positive diagonal, which is what makes Q Haar).
inline ComplexMatrix haar_unitary_2x2(Rng& rng) {
  Complex c0[2] = {complex_normal(rng), complex_normal(rng)};
  Complex c1[2] = {complex_normal(rng), complex_normal(rng)};
  const double n0 = std::sqrt(std::norm(c0[0]) + std::norm(c0[1]));
  c0[0] /= n0;
  c0[1] /= n0;
  const Complex proj = std::conj(c0[0]) * c1[0] + std::conj(c0[1]) * c1[1];
  c1[0] -= proj * c0[0];
  c1[1] -= proj * c0[1];
  const double n1 = std::sqrt(std::norm(c1[0]) + std::norm(c1[1]));
  c1[0] /= n1;
  c1[1] /= n1;
  return {{c0[0], c1[0]}, {c0[1], c1[1]}};
}

inline std::array<Complex, 4> apply_unitary(const ComplexMatrix& u,
                                            const std::array<Complex, 4>& psi) {
  std::array<Complex, 4> out{};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) out[r] += u(r, c) * psi[c];
  }
  return out;
}

inline DensityMatrix pure_state(const std::array<Complex, 4>& psi) {
  return validate_density_matrix(ComplexMatrix::outer(psi), 1e-9);
}

inline std::array<Complex, 4> circuit_vector(int depth, Rng& rng) {
  std::array<Complex, 4> psi{1.0, 0.0, 0.0, 0.0};
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  for (int layer = 0; layer < depth; ++layer) {
    const ComplexMatrix ua = haar_unitary_2x2(rng);
    const ComplexMatrix ub = haar_unitary_2x2(rng);
    psi = apply_unitary(kron(ua, ub), psi);
    // exp(-i theta Z(x)Z / 2) is diagonal with ZZ eigenvalues (+1,-1,-1,+1).
    const double theta = angle(rng);
    const Complex plus = std::polar(1.0, -theta / 2.0);
    const Complex minus = std::polar(1.0, theta / 2.0);
    psi[0] *= plus;
    psi[1] *= minus;
    psi[2] *= minus;
    psi[3] *= plus;
  }
  return psi;
}

}  // namespace detail

/// Pure state drawn from the unitarily invariant measure on C^4.
inline DensityMatrix sample_haar_pure(Rng& rng) {
  std::array<Complex, 4> psi;
  double norm = 0.0;
  for (auto& z : psi) {
    z = detail::complex_normal(rng);
    norm += std::norm(z);
  }
  norm = std::sqrt(norm);
  for (auto& z : psi) z /= norm;
  return detail::pure_state(psi);
}

/// rho = G G^dagger / Tr(G G^dagger) for a 4 x rank complex Ginibre G.
inline DensityMatrix sample_ginibre_mixed(int rank, Rng& rng) {
  if (rank < 1 || rank > 4) {
    fail(ErrorKind::InvalidArgument, "Ginibre rank must be in 1..4");
  }
  ComplexMatrix g(4, static_cast<std::size_t>(rank));
  for (auto& z : g.data()) z = detail::complex_normal(rng);
  ComplexMatrix rho = g * g.adjoint();
  rho *= 1.0 / rho.trace().real();
  return validate_density_matrix(rho, 1e-9);
}

/// `depth` layers of Haar local unitaries followed by a partial ZZ entangler
/// applied to |00>. With probability 1/2 the result is mixed with an
/// independent second draw.
inline DensityMatrix sample_circuit_state(int depth, Rng& rng) {
  if (depth < 0) fail(ErrorKind::InvalidArgument, "circuit depth must be >= 0");
  const ComplexMatrix first = ComplexMatrix::outer(detail::circuit_vector(depth, rng));
  std::bernoulli_distribution mix(0.5);
  if (!mix(rng)) return validate_density_matrix(first, 1e-9);
  const double w = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const ComplexMatrix second = ComplexMatrix::outer(detail::circuit_vector(depth, rng));
  return validate_density_matrix(first * w + second * (1.0 - w), 1e-9);
}

/// Local-unitary randomized |Phi+>.
inline DensityMatrix sample_bell_randomized(Rng& rng) {
  const double h = 1.0 / std::numbers::sqrt2;
  const std::array<Complex, 4> phi_plus{h, 0.0, 0.0, h};
  const ComplexMatrix ua = detail::haar_unitary_2x2(rng);
  const ComplexMatrix ub = detail::haar_unitary_2x2(rng);
  return detail::pure_state(detail::apply_unitary(kron(ua, ub), phi_plus));
}

// ---------------------------------------------------------------------------
// Datasets

struct SourceMix {
  double haar = 0.35;
  double ginibre = 0.35;
  double circuit = 0.25;
  double bell = 0.05;
};

struct DatasetSpec {
  std::size_t n_total = 0;
  double fraction_entangled_target = 0.53;
  std::size_t n_bell = 0;
  SourceMix source_mix{};
  std::uint64_t seed = 0;
  int circuit_depth = 2;
  std::size_t threads = 1;

  /// n_bell defaults to the Bell weight of the mix.
  static DatasetSpec with_defaults(std::size_t n_total, std::uint64_t seed) {
    DatasetSpec s;
    s.n_total = n_total;
    s.seed = seed;
    s.n_bell = static_cast<std::size_t>(std::llround(s.source_mix.bell * n_total));
    return s;
  }
};

inline void validate(const DatasetSpec& spec) {
  const SourceMix& m = spec.source_mix;
  for (double w : {m.haar, m.ginibre, m.circuit, m.bell}) {
    if (!(w >= 0.0)) fail(ErrorKind::InvalidConfig, "source weights must be nonnegative");
  }
  if (std::abs(m.haar + m.ginibre + m.circuit + m.bell - 1.0) > 1e-9) {
    fail(ErrorKind::InvalidConfig, "source weights must sum to 1");
  }
  if (m.haar + m.ginibre + m.circuit <= 0.0) {
    fail(ErrorKind::InvalidConfig, "at least one non-Bell source needs positive weight");
  }
  if (spec.n_total == 0) fail(ErrorKind::InvalidConfig, "n_total must be positive");
  if (spec.n_bell > spec.n_total) fail(ErrorKind::InvalidConfig, "n_bell exceeds n_total");
  if (!(spec.fraction_entangled_target >= 0.0 && spec.fraction_entangled_target <= 1.0)) {
    fail(ErrorKind::InvalidConfig, "fraction_entangled_target must lie in [0, 1]");
  }
  if (spec.circuit_depth < 0) fail(ErrorKind::InvalidConfig, "circuit_depth must be >= 0");
}

/// One draw from the non-Bell part of the mix (Bell weight renormalized away).
inline LabeledState sample_from_mix(const DatasetSpec& spec, Rng& rng) {
  const SourceMix& m = spec.source_mix;
  const double total = m.haar + m.ginibre + m.circuit;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  if (u < m.haar) return label_state(sample_haar_pure(rng), {SourceKind::HaarPure, 1});
  if (u < m.haar + m.ginibre) {
    const int rank = std::uniform_int_distribution<int>(1, 4)(rng);
    return label_state(sample_ginibre_mixed(rank, rng), {SourceKind::GinibreMixed, rank});
  }
  return label_state(sample_circuit_state(spec.circuit_depth, rng), {SourceKind::Circuit, 0});
}

/// Exactly n_total states: n_bell randomized Bell states plus draws from the
/// mix, where each draw is kept only while its class quota is open. The
/// result is shuffled with a seed-derived stream. Draw k always uses
/// stream (seed, k), so the output does not depend on the thread count.
inline std::vector<LabeledState> generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  const std::size_t quota_entangled = static_cast<std::size_t>(
      std::llround(spec.fraction_entangled_target * static_cast<double>(spec.n_total)));
  const std::size_t quota_separable = spec.n_total - quota_entangled;
  if (spec.n_bell > quota_entangled) {
    fail(ErrorKind::SpecInfeasible, "n_bell exceeds the entangled quota");
  }

  std::vector<LabeledState> out;
  out.reserve(spec.n_total);
  for (std::size_t j = 0; j < spec.n_bell; ++j) {
    Rng rng = derive_rng(spec.seed, {stream::kBell, j});
    out.push_back(label_state(sample_bell_randomized(rng), {SourceKind::BellRandomized, 1}));
  }

  std::size_t n_entangled = spec.n_bell;
  std::size_t n_separable = 0;
  const std::size_t budget = 100 * spec.n_total;
  constexpr std::size_t kChunk = 4096;
  std::size_t attempt = 0;
  std::vector<std::optional<LabeledState>> chunk(kChunk);
  while (n_entangled < quota_entangled || n_separable < quota_separable) {
    if (attempt >= budget) {
      fail(ErrorKind::SpecInfeasible,
           "class targets not reached within 100 * n_total draws");
    }
    const std::size_t count = std::min(kChunk, budget - attempt);
    parallel_for(count, spec.threads, [&](std::size_t i) {
      Rng rng = derive_rng(spec.seed, {stream::kSampler, attempt + i});
      chunk[i] = sample_from_mix(spec, rng);
    });
    for (std::size_t i = 0; i < count; ++i) {
      LabeledState& s = *chunk[i];
      if (s.entangled && n_entangled < quota_entangled) {
        ++n_entangled;
        out.push_back(std::move(s));
      } else if (!s.entangled && n_separable < quota_separable) {
        ++n_separable;
        out.push_back(std::move(s));
      }
      if (n_entangled == quota_entangled && n_separable == quota_separable) break;
    }
    attempt += count;
  }

  Rng shuffle = derive_rng(spec.seed, {stream::kShuffle});
  std::shuffle(out.begin(), out.end(), shuffle);
  return out;
}

}  // namespace qent
