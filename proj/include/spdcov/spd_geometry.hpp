#pragma once

// Linear algebra and log-Euclidean Riemannian operations on symmetric
// positive definite matrices. All arithmetic is double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>

#include "spdcov/error.hpp"

namespace spdcov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kSymmetryTolerance = 1e-10;
/// Relative eigenvalue floor for SPD validation: lambda_min > kSpdRelativeFloor * lambda_max.
inline constexpr double kSpdRelativeFloor = 1e-12;
/// exp() overflows a double above this argument.
inline constexpr double kExpOverflowLimit = 709.78;

struct SymEigen {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // columns
};

namespace detail {

inline bool is_symmetric(const Matrix& m, double tol = kSymmetryTolerance) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol * std::max(1.0, std::abs(m(i, j)))) return false;
  return true;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline SymEigen sym_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "symmetric eigensolver failed to converge (dim " << m.rows() << ", condition estimate ";
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double cond = s.size() ? s[0] / std::max(s[s.size() - 1], std::numeric_limits<double>::min())
                                 : 0.0;
    msg << cond << ")";
    throw NumericalError(msg.str());
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// Q diag(f(lambda)) Q^T.
template <typename F>
Matrix spectral_apply(const SymEigen& eig, F&& f) {
  Vector mapped = eig.eigenvalues.unaryExpr(std::forward<F>(f));
  Matrix out = eig.eigenvectors * mapped.asDiagonal() * eig.eigenvectors.transpose();
  return symmetrized(out);
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    std::ostringstream msg;
    msg << what << ": expected a non-empty square matrix, got " << m.rows() << "x" << m.cols();
    throw DataError(msg.str());
  }
  if (!m.allFinite()) throw DataError(std::string(what) + ": non-finite entries");
}

}  // namespace detail

/// Symmetric (not necessarily definite) matrix; tangent vectors live here.
class SymmetricMatrix {
 public:
  /// Rejects input that is asymmetric beyond kSymmetryTolerance, then
  /// stores (M + M^T) / 2.
  explicit SymmetricMatrix(const Matrix& m) {
    detail::require_square(m, "SymmetricMatrix");
    if (!detail::is_symmetric(m)) throw DataError("SymmetricMatrix: input is not symmetric");
    m_ = detail::symmetrized(m);
  }

  static SymmetricMatrix zero(Eigen::Index dim) { return SymmetricMatrix(Matrix::Zero(dim, dim)); }
  static SymmetricMatrix identity(Eigen::Index dim) {
    return SymmetricMatrix(Matrix::Identity(dim, dim));
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  friend SymmetricMatrix operator+(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    a.check_dim(b);
    return SymmetricMatrix(a.m_ + b.m_);
  }
  friend SymmetricMatrix operator-(const SymmetricMatrix& a, const SymmetricMatrix& b) {
    a.check_dim(b);
    return SymmetricMatrix(a.m_ - b.m_);
  }
  friend SymmetricMatrix operator*(double s, const SymmetricMatrix& a) {
    return SymmetricMatrix(s * a.m_);
  }
  friend SymmetricMatrix operator-(const SymmetricMatrix& a) { return SymmetricMatrix(-a.m_); }

 private:
  void check_dim(const SymmetricMatrix& other) const {
    if (other.dim() != dim()) throw DimensionMismatch("SymmetricMatrix", dim(), other.dim());
  }

  Matrix m_;
};

/// Symmetric positive definite matrix. Validated on construction; keeps its
/// eigendecomposition so matrix functions do not re-factorize.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& m) {
    detail::require_square(m, "SpdMatrix");
    if (!detail::is_symmetric(m)) throw DataError("SpdMatrix: input is not symmetric");
    m_ = detail::symmetrized(m);
    eig_ = detail::sym_eig(m_);
    const double lo = eig_.eigenvalues[0];
    const double hi = eig_.eigenvalues[eig_.eigenvalues.size() - 1];
    if (!(lo > 0.0) || !(lo > kSpdRelativeFloor * hi)) {
      std::ostringstream msg;
      msg << "SpdMatrix: matrix is not positive definite (dim " << dim() << ", lambda_min " << lo
          << ", lambda_max " << hi << ")";
      throw NumericalError(msg.str());
    }
  }

  /// Builds Q diag(lambda) Q^T from a known spectrum. Only requires
  /// strictly positive finite eigenvalues; the relative floor does not apply.
  static SpdMatrix from_spectrum(Matrix eigenvectors, Vector eigenvalues) {
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
      if (!(eigenvalues[i] > 0.0) || !std::isfinite(eigenvalues[i]))
        throw NumericalError("SpdMatrix: spectrum is not strictly positive and finite");
    SpdMatrix out;
    out.eig_ = {std::move(eigenvalues), std::move(eigenvectors)};
    out.m_ = detail::symmetrized(out.eig_.eigenvectors * out.eig_.eigenvalues.asDiagonal() *
                                 out.eig_.eigenvectors.transpose());
    return out;
  }

  static SpdMatrix identity(Eigen::Index dim) { return SpdMatrix(Matrix::Identity(dim, dim)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  const SymEigen& eigen() const { return eig_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  SpdMatrix() = default;

  Matrix m_;
  SymEigen eig_;
};

inline SymEigen sym_eig(const SymmetricMatrix& m) { return detail::sym_eig(m.matrix()); }

inline SymmetricMatrix mat_log(const SpdMatrix& a) {
  return SymmetricMatrix(detail::spectral_apply(a.eigen(), [](double l) { return std::log(l); }));
}

inline SpdMatrix mat_exp(const SymmetricMatrix& s) {
  SymEigen eig = sym_eig(s);
  const double top = eig.eigenvalues[eig.eigenvalues.size() - 1];
  if (top > kExpOverflowLimit) {
    std::ostringstream msg;
    msg << "mat_exp: eigenvalue " << top << " overflows exp()";
    throw OverflowError(msg.str());
  }
  Vector expd = eig.eigenvalues.array().exp().matrix();
  return SpdMatrix::from_spectrum(std::move(eig.eigenvectors), std::move(expd));
}

inline double lem_distance(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("lem_distance", a.dim(), b.dim());
  return (mat_log(a).matrix() - mat_log(b).matrix()).norm();
}

/// Log-Euclidean Frechet mean. The metric is flat in log coordinates, so the
/// minimizer of the summed squared distances is exp of the mean log.
inline SpdMatrix karcher_mean_lem(std::span<const SpdMatrix> set) {
  if (set.empty()) throw DataError("karcher_mean_lem: empty set");
  const Eigen::Index dim = set.front().dim();
  Matrix acc = Matrix::Zero(dim, dim);
  for (const auto& a : set) {
    if (a.dim() != dim) throw DimensionMismatch("karcher_mean_lem", dim, a.dim());
    acc += mat_log(a).matrix();
  }
  acc /= static_cast<double>(set.size());
  return mat_exp(SymmetricMatrix(acc));
}

inline SymmetricMatrix log_map(const SpdMatrix& base, const SpdMatrix& a) {
  if (base.dim() != a.dim()) throw DimensionMismatch("log_map", base.dim(), a.dim());
  return mat_log(a) - mat_log(base);
}

inline SpdMatrix exp_map(const SpdMatrix& base, const SymmetricMatrix& t) {
  if (base.dim() != t.dim()) throw DimensionMismatch("exp_map", base.dim(), t.dim());
  return mat_exp(mat_log(base) + t);
}

inline constexpr Eigen::Index tangent_dim(Eigen::Index n) { return n * (n + 1) / 2; }

/// Row-major upper-triangle half-vectorization with off-diagonal entries
/// scaled by sqrt(2); the Euclidean norm of the result equals the Frobenius
/// norm of the input.
inline Vector tangent_vectorize(const Matrix& t) {
  const Eigen::Index n = t.rows();
  Vector v(tangent_dim(n));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) v[k++] = (i == j) ? t(i, i) : M_SQRT2 * t(i, j);
  return v;
}

inline Vector tangent_vectorize(const SymmetricMatrix& t) { return tangent_vectorize(t.matrix()); }

/// Inverse of tangent_vectorize. Also maps a gradient with respect to the
/// vector onto the gradient with respect to the symmetric matrix.
inline Matrix tangent_devectorize_matrix(const Vector& v) {
  const auto n = static_cast<Eigen::Index>(std::lround((std::sqrt(8.0 * v.size() + 1.0) - 1.0) / 2.0));
  if (tangent_dim(n) != v.size())
    throw DataError("tangent_devectorize: length " + std::to_string(v.size()) +
                    " is not a triangular number");
  Matrix t(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) {
      const double x = (i == j) ? v[k] : v[k] / M_SQRT2;
      t(i, j) = x;
      t(j, i) = x;
      ++k;
    }
  return t;
}

inline SymmetricMatrix tangent_devectorize(const Vector& v) {
  return SymmetricMatrix(tangent_devectorize_matrix(v));
}

}  // namespace spdcov
