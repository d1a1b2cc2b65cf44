#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <vector>

#include "qent/qcore.hpp"
#include "qent/rng.hpp"
#include "qent/sampler.hpp"

namespace qent::testing {

inline Eigen::Matrix4cd to_eigen(const ComplexMatrix& m) {
  Eigen::Matrix4cd out;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out(r, c) = m(r, c);
  }
  return out;
}

/// Wootters' original route: square roots of the eigenvalues of the
/// non-Hermitian product rho * (Y rho* Y), via a general complex eigensolver.
inline double concurrence_oracle(const ComplexMatrix& rho) {
  const Eigen::Matrix4cd r = to_eigen(rho);
  const Eigen::Matrix4cd yy = to_eigen(spin_flip());
  const Eigen::Matrix4cd product = r * (yy * r.conjugate() * yy);
  Eigen::ComplexEigenSolver<Eigen::Matrix4cd> solver(product, false);
  std::vector<double> lambda;
  for (int k = 0; k < 4; ++k) {
    lambda.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()[k].real())));
  }
  std::sort(lambda.rbegin(), lambda.rend());
  return std::max(0.0, lambda[0] - lambda[1] - lambda[2] - lambda[3]);
}

/// A random valid state from a random source, for property tests.
inline DensityMatrix random_state(Rng& rng) {
  switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
    case 0: return sample_haar_pure(rng);
    case 1: return sample_circuit_state(2, rng);
    case 2: return sample_bell_randomized(rng);
    default: return sample_ginibre_mixed(std::uniform_int_distribution<int>(1, 4)(rng), rng);
  }
}

}  // namespace qent::testing
