#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <utility>

#include "matsense/rng.hpp"

namespace matsense {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// d x r factor block (columns are factors, r <= d).
using FactorMatrix = Eigen::MatrixXd;

/// Dense real symmetric matrix. Entries are mirrored from the upper triangle
/// on construction, so (i,j) == (j,i) holds exactly, not just to rounding.
class SymMatrix {
 public:
  SymMatrix() = default;

  static SymMatrix zero(Eigen::Index d) { return SymMatrix(Matrix::Zero(d, d)); }

  static SymMatrix identity(Eigen::Index d) { return SymMatrix(Matrix::Identity(d, d)); }

  /// Takes the upper triangle (including diagonal) of m and mirrors it.
  static SymMatrix from_upper(Matrix m) {
    mirror_upper(m);
    return SymMatrix(std::move(m));
  }

  /// (m + m^T)/2, mirrored exactly.
  static SymMatrix symmetrized(const Matrix& m) {
    Matrix s = 0.5 * (m + m.transpose());
    mirror_upper(s);
    return SymMatrix(std::move(s));
  }

  /// Accepts a matrix that is already symmetric to within `tol` (relative to
  /// its max entry) and enforces exact symmetry.
  static SymMatrix from_symmetric(Matrix m, double tol = 1e-10) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose().eval()).cwiseAbs().maxCoeff() > tol * scale)
      throw std::invalid_argument("SymMatrix::from_symmetric: input is not symmetric");
    mirror_upper(m);
    return SymMatrix(std::move(m));
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  double frobenius_norm() const { return m_.norm(); }
  double trace() const { return m_.trace(); }

  // Entrywise combinations of exactly-symmetric matrices stay exactly
  // symmetric, so these skip re-mirroring.
  SymMatrix& operator+=(const SymMatrix& o) { m_ += o.m_; return *this; }
  SymMatrix& operator-=(const SymMatrix& o) { m_ -= o.m_; return *this; }
  SymMatrix& operator*=(double c) { m_ *= c; return *this; }

  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { a += b; return a; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { a -= b; return a; }
  friend SymMatrix operator*(double c, SymMatrix a) { a *= c; return a; }

 private:
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {}

  static void mirror_upper(Matrix& m) {
    if (m.rows() != m.cols())
      throw std::invalid_argument("SymMatrix: matrix must be square");
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < j; ++i) m(j, i) = m(i, j);
  }

  Matrix m_;
};

inline double frobenius_inner(const SymMatrix& a, const SymMatrix& b) {
  return (a.mat().array() * b.mat().array()).sum();
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending,
/// eigenvectors as orthonormal columns in matching order.
struct Spectrum {
  Vector eigenvalues;
  Matrix eigenvectors;
};

class EighError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Full symmetric eigendecomposition (descending). Throws EighError if the
/// iterative solver fails to converge; never returns silent garbage.
inline Spectrum eigh(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.mat());
  if (solver.info() != Eigen::Success)
    throw EighError("eigh: eigensolver did not converge");
  const Eigen::Index d = a.dim();
  Spectrum s;
  s.eigenvalues = solver.eigenvalues().reverse();
  s.eigenvectors.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k)
    s.eigenvectors.col(k) = solver.eigenvectors().col(d - 1 - k);
  return s;
}

/// Q diag(w) Q^T, returned exactly symmetric.
inline SymMatrix reconstruct(const Matrix& eigenvectors, const Vector& eigenvalues) {
  Matrix m = eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  return SymMatrix::from_upper(std::move(m));
}

/// Largest absolute eigenvalue.
inline double spectral_norm(const SymMatrix& a) {
  return eigh(a).eigenvalues.cwiseAbs().maxCoeff();
}

/// Sum of absolute eigenvalues.
inline double nuclear_norm(const SymMatrix& a) {
  return eigh(a).eigenvalues.cwiseAbs().sum();
}

/// GOE(d): N(0,1) diagonal, N(0,1/2) off-diagonal, independent, mirrored.
/// Draw order is the row-major upper triangle, so a fresh stream always
/// yields the same matrix bit for bit.
inline SymMatrix sample_goe(Eigen::Index d, RngStream& rng) {
  if (d < 1) throw std::invalid_argument("sample_goe: d must be >= 1");
  Matrix m(d, d);
  const double off_scale = std::sqrt(0.5);
  for (Eigen::Index i = 0; i < d; ++i) {
    m(i, i) = rng.gaussian();
    for (Eigen::Index j = i + 1; j < d; ++j) m(i, j) = off_scale * rng.gaussian();
  }
  return SymMatrix::from_upper(std::move(m));
}

/// Result of the orthogonal alignment problem min ||U O - U2||_F over
/// orthogonal O. `rank_deficient` flags a (near-)singular U^T U2, where the
/// minimizer is still well-defined via the SVD but no longer unique.
struct ProcrustesResult {
  Matrix rotation;
  bool rank_deficient = false;
};

inline ProcrustesResult procrustes_align(const FactorMatrix& u, const FactorMatrix& u2) {
  if (u.rows() != u2.rows() || u.cols() != u2.cols())
    throw std::invalid_argument("procrustes_align: dimension mismatch");
  const Matrix cross = u.transpose() * u2;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  ProcrustesResult res;
  res.rotation = svd.matrixU() * svd.matrixV().transpose();
  const auto& sv = svd.singularValues();
  res.rank_deficient = sv.size() == 0 || sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0));
  return res;
}

/// Symmetric square root of a symmetric positive definite matrix.
/// Throws std::domain_error on non-PD input.
inline Matrix sqrt_spd(const Matrix& s, double tol = 1e-12) {
  SymMatrix sym = SymMatrix::from_symmetric(s, 1e-8);
  Spectrum spec = eigh(sym);
  const double top = spec.eigenvalues(0);
  if (top <= 0.0 || spec.eigenvalues(spec.eigenvalues.size() - 1) <= tol * top)
    throw std::domain_error("sqrt_spd: matrix is not positive definite");
  Vector roots = spec.eigenvalues.cwiseSqrt();
  return reconstruct(spec.eigenvectors, roots).mat();
}

}  // namespace matsense
