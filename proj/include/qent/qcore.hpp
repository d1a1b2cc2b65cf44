#pragma once

// Small dense complex linear algebra, density-matrix validation and the
// two-qubit concurrence.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qent/errors.hpp"

namespace qent {

using Complex = std::complex<double>;

/// Row-major dense complex matrix.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols) {
    if (rows == 0 || cols == 0) {
      fail(ErrorKind::InvalidArgument, "matrix dimensions must be positive");
    }
  }
  ComplexMatrix(std::initializer_list<std::initializer_list<Complex>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    if (rows_ == 0 || cols_ == 0) {
      fail(ErrorKind::InvalidArgument, "matrix dimensions must be positive");
    }
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) {
        fail(ErrorKind::InvalidArgument, "ragged matrix initializer");
      }
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static ComplexMatrix diagonal(std::span<const double> values) {
    ComplexMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  /// |v><v|
  static ComplexMatrix outer(std::span<const Complex> v) {
    ComplexMatrix m(v.size(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = 0; j < v.size(); ++j) {
        m(i, j) = v[i] * std::conj(v[j]);
      }
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  Complex& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  const Complex& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<const Complex> data() const noexcept { return data_; }
  std::span<Complex> data() noexcept { return data_; }

  ComplexMatrix adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols_; ++c) {
        out(c, r) = std::conj((*this)(r, c));
      }
    }
    return out;
  }

  ComplexMatrix conjugate() const {
    ComplexMatrix out = *this;
    for (auto& z : out.data_) z = std::conj(z);
    return out;
  }

  Complex trace() const {
    Complex t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& z : data_) m = std::max(m, std::abs(z));
    return m;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (const auto& z : data_) s += std::norm(z);
    return std::sqrt(s);
  }

  ComplexMatrix& operator+=(const ComplexMatrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  ComplexMatrix& operator-=(const ComplexMatrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  ComplexMatrix& operator*=(Complex s) {
    for (auto& z : data_) z *= s;
    return *this;
  }

  friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) {
    return a += b;
  }
  friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) {
    return a -= b;
  }
  friend ComplexMatrix operator*(ComplexMatrix a, Complex s) { return a *= s; }
  friend ComplexMatrix operator*(Complex s, ComplexMatrix a) { return a *= s; }

  friend ComplexMatrix operator*(const ComplexMatrix& a,
                                 const ComplexMatrix& b) {
    if (a.cols_ != b.rows_) {
      fail(ErrorKind::InvalidArgument, "matrix product shape mismatch");
    }
    ComplexMatrix out(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i) {
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const Complex aik = a(i, k);
        if (aik == Complex(0.0)) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
      }
    }
    return out;
  }

  friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;

 private:
  void check_same_shape(const ComplexMatrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      fail(ErrorKind::InvalidArgument, "matrix shape mismatch");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Complex> data_;
};

inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
  return (a - b).max_abs();
}

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      for (std::size_t k = 0; k < b.rows(); ++k) {
        for (std::size_t l = 0; l < b.cols(); ++l) {
          out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
        }
      }
    }
  }
  return out;
}

inline double hermiticity_defect(const ComplexMatrix& m) {
  double d = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = r; c < m.cols(); ++c) {
      d = std::max(d, std::abs(m(r, c) - std::conj(m(c, r))));
    }
  }
  return d;
}

/// Pauli matrices.
namespace pauli {
inline ComplexMatrix x() { return {{0.0, 1.0}, {1.0, 0.0}}; }
inline ComplexMatrix y() {
  return {{0.0, Complex(0.0, -1.0)}, {Complex(0.0, 1.0), 0.0}};
}
inline ComplexMatrix z() { return {{1.0, 0.0}, {0.0, -1.0}}; }
}  // namespace pauli

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are sorted in
/// descending order; column k of `eigenvectors` belongs to `eigenvalues[k]`.
struct Spectrum {
  std::vector<double> eigenvalues;
  ComplexMatrix eigenvectors;
};

struct JacobiOptions {
  double tolerance = 1e-12;
  int max_sweeps = 100;
};

/// Cyclic complex Jacobi. Converges when the off-diagonal Frobenius norm is
/// below `tolerance * max(1, ||H||_F)`.
inline Spectrum hermitian_eigen(const ComplexMatrix& h,
                                JacobiOptions options = {}) {
  if (!h.square()) fail(ErrorKind::InvalidArgument, "matrix is not square");
  const std::size_t n = h.rows();
  if (n > 64) fail(ErrorKind::InvalidArgument, "hermitian_eigen supports n <= 64");
  const double defect = hermiticity_defect(h);
  if (defect > 1e-9 * std::max(1.0, h.max_abs())) {
    std::ostringstream msg;
    msg << "max |H - H^dagger| = " << defect;
    fail(ErrorKind::NotHermitian, msg.str());
  }

  ComplexMatrix a = h;
  // Symmetrize exactly so the rotations see a Hermitian matrix.
  for (std::size_t r = 0; r < n; ++r) {
    a(r, r) = a(r, r).real();
    for (std::size_t c = r + 1; c < n; ++c) {
      const Complex avg = 0.5 * (a(r, c) + std::conj(a(c, r)));
      a(r, c) = avg;
      a(c, r) = std::conj(avg);
    }
  }
  ComplexMatrix v = ComplexMatrix::identity(n);
  const double threshold = options.tolerance * std::max(1.0, a.frobenius_norm());

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = r + 1; c < n; ++c) s += 2.0 * std::norm(a(r, c));
    }
    return std::sqrt(s);
  };

  double off = off_norm();
  int sweep = 0;
  while (off > threshold) {
    if (sweep++ >= options.max_sweeps) {
      std::ostringstream msg;
      msg << "Jacobi exhausted " << options.max_sweeps
          << " sweeps, off-diagonal norm " << off;
      fail(ErrorKind::NoConvergence, msg.str());
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const Complex g = a(p, q);
        const double mag = std::abs(g);
        if (mag == 0.0) continue;
        const Complex phase = g / mag;
        // Real Jacobi on [[a_pp, |g|], [|g|, a_qq]] after rotating the phase
        // of column q.
        const double app = a(p, p).real();
        const double aqq = a(q, q).real();
        const double theta = (aqq - app) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // U = diag(1, conj(phase)) * [[c, s], [-s, c]] on (p, q).
        const Complex upp = c;
        const Complex upq = s;
        const Complex uqp = -s * std::conj(phase);
        const Complex uqq = c * std::conj(phase);
        // A <- A U
        for (std::size_t k = 0; k < n; ++k) {
          const Complex akp = a(k, p);
          const Complex akq = a(k, q);
          a(k, p) = akp * upp + akq * uqp;
          a(k, q) = akp * upq + akq * uqq;
        }
        // A <- U^dagger A
        for (std::size_t k = 0; k < n; ++k) {
          const Complex apk = a(p, k);
          const Complex aqk = a(q, k);
          a(p, k) = std::conj(upp) * apk + std::conj(uqp) * aqk;
          a(q, k) = std::conj(upq) * apk + std::conj(uqq) * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        a(p, p) = a(p, p).real();
        a(q, q) = a(q, q).real();
        for (std::size_t k = 0; k < n; ++k) {
          const Complex vkp = v(k, p);
          const Complex vkq = v(k, q);
          v(k, p) = vkp * upp + vkq * uqp;
          v(k, q) = vkp * upq + vkq * uqq;
        }
      }
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a(i, i).real() > a(j, j).real();
  });
  Spectrum out{std::vector<double>(n), ComplexMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]).real();
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = v(r, order[k]);
  }
  return out;
}

/// V diag(f(lambda)) V^dagger
template <class Fn>
ComplexMatrix spectral_map(const Spectrum& spectrum, Fn&& fn) {
  const std::size_t n = spectrum.eigenvalues.size();
  const ComplexMatrix& v = spectrum.eigenvectors;
  ComplexMatrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = fn(spectrum.eigenvalues[k]);
    if (f == 0.0) continue;
    for (std::size_t r = 0; r < n; ++r) {
      const Complex vr = v(r, k) * f;
      for (std::size_t c = 0; c < n; ++c) out(r, c) += vr * std::conj(v(c, k));
    }
  }
  return out;
}

/// Eigenvalues in [-1e-10, 0) are floating-point drift and treated as zero.
inline constexpr double kClipBand = 1e-10;

inline ComplexMatrix matrix_sqrt_psd(const ComplexMatrix& a) {
  const Spectrum s = hermitian_eigen(a);
  const double smallest = s.eigenvalues.back();
  if (smallest < -1e-9) {
    std::ostringstream msg;
    msg << "smallest eigenvalue " << smallest << " < -1e-9";
    fail(ErrorKind::NotPositive, msg.str());
  }
  return spectral_map(s, [](double l) { return l > 0.0 ? std::sqrt(l) : 0.0; });
}

/// A validated two-qubit state: 4x4, Hermitian, unit trace, positive
/// semidefinite. Only obtainable through `validate_density_matrix`.
class DensityMatrix {
 public:
  const ComplexMatrix& matrix() const noexcept { return mat_; }
  const Complex& operator()(std::size_t r, std::size_t c) const {
    return mat_(r, c);
  }
  double purity() const { return (mat_ * mat_).trace().real(); }

 private:
  explicit DensityMatrix(ComplexMatrix m) : mat_(std::move(m)) {}
  friend DensityMatrix validate_density_matrix(const ComplexMatrix&, double);

  ComplexMatrix mat_;
};

/// Checks the three density-matrix invariants. Hermiticity and trace are
/// checked against `tol`, positivity against max(tol, 1e-9).
inline DensityMatrix validate_density_matrix(const ComplexMatrix& raw,
                                             double tol = 1e-10) {
  if (raw.rows() != 4 || raw.cols() != 4) {
    fail(ErrorKind::InvalidArgument, "two-qubit density matrix must be 4x4");
  }
  const double defect = hermiticity_defect(raw);
  if (defect > tol) {
    std::ostringstream msg;
    msg << "max |rho - rho^dagger| = " << defect << " exceeds " << tol;
    fail(ErrorKind::NotHermitian, msg.str());
  }
  const double trace_err = std::abs(raw.trace() - Complex(1.0));
  if (trace_err > tol) {
    std::ostringstream msg;
    msg << "|Tr(rho) - 1| = " << trace_err << " exceeds " << tol;
    fail(ErrorKind::TraceNotOne, msg.str());
  }
  const double smallest = hermitian_eigen(raw).eigenvalues.back();
  const double psd_tol = std::max(tol, 1e-9);
  if (smallest < -psd_tol) {
    std::ostringstream msg;
    msg << "smallest eigenvalue " << smallest << " below -" << psd_tol;
    fail(ErrorKind::NotPositive, msg.str());
  }
  return DensityMatrix(raw);
}

/// sigma_y (x) sigma_y in the computational basis.
inline const ComplexMatrix& spin_flip() {
  static const ComplexMatrix yy = kron(pauli::y(), pauli::y());
  return yy;
}

namespace detail {

/// Concurrence from the eigendecomposition rho = W W^dagger, W = V sqrt(P).
/// The l_k are the singular values of tau = W^T Y W; they coincide with the
/// square roots of the eigenvalues of sqrt(rho) Y rho* Y sqrt(rho), but
/// taking them directly avoids square roots of rounding noise (about 1e-8
/// on pure states).
inline double concurrence_from_spectrum(const Spectrum& rho_spectrum) {
  for (double p : rho_spectrum.eigenvalues) {
    if (p < -1e-9) {
      std::ostringstream msg;
      msg << "density-matrix eigenvalue " << p << " below -1e-9";
      fail(ErrorKind::NotPositive, msg.str());
    }
  }
  Eigen::Matrix4cd w;
  for (int c = 0; c < 4; ++c) {
    const double p = rho_spectrum.eigenvalues[c];
    const double root = p > 0.0 ? std::sqrt(p) : 0.0;
    for (int r = 0; r < 4; ++r) w(r, c) = rho_spectrum.eigenvectors(r, c) * root;
  }
  Eigen::Matrix4cd yy = Eigen::Matrix4cd::Zero();
  yy(0, 3) = yy(3, 0) = -1.0;
  yy(1, 2) = yy(2, 1) = 1.0;
  const Eigen::Matrix4cd tau = w.transpose() * yy * w;
  const Eigen::Vector4d l = Eigen::JacobiSVD<Eigen::Matrix4cd>(tau).singularValues();
  return std::clamp(l[0] - l[1] - l[2] - l[3], 0.0, 1.0);
}

}  // namespace detail

/// Wootters concurrence, C = max(0, l1 - l2 - l3 - l4).
inline double concurrence(const DensityMatrix& rho) {
  return detail::concurrence_from_spectrum(hermitian_eigen(rho.matrix()));
}

}  // namespace qent
