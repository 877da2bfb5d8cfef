#pragma once

#include <numeric>
#include <stdexcept>
#include <vector>

#include "matsense/linalg.hpp"
#include "matsense/sensing.hpp"

namespace matsense {

struct DenoiseResult {
  SymMatrix Z;
  int kept_rank = 0;   // spectral components surviving the operation
  double shift = 0.0;  // threshold applied (0 for rank truncation)
};

/// Eigenvalue soft-thresholding onto the PSD cone: each eigenvalue mu of A
/// maps to max(mu - thr, 0). This is the minimizer of
/// (1/2)||Z - A||_F^2 + thr*||Z||_* over Z >= 0.
inline DenoiseResult soft_threshold_psd(const SymMatrix& a, double thr) {
  if (thr < 0.0) throw std::invalid_argument("soft_threshold_psd: thr must be >= 0");
  Spectrum s = eigh(a);
  Vector w = (s.eigenvalues.array() - thr).max(0.0);
  DenoiseResult res;
  res.Z = reconstruct(s.eigenvectors, w);
  res.kept_rank = static_cast<int>((w.array() > 0.0).count());
  res.shift = thr;
  return res;
}

/// Unconstrained singular-value soft-thresholding for symmetric input:
/// shrink |mu| by thr, floor at zero, keep the sign of mu.
inline DenoiseResult soft_threshold_svd(const SymMatrix& a, double thr) {
  if (thr < 0.0) throw std::invalid_argument("soft_threshold_svd: thr must be >= 0");
  Spectrum s = eigh(a);
  Vector w(s.eigenvalues.size());
  int kept = 0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const double mu = s.eigenvalues(k);
    const double shrunk = std::max(std::abs(mu) - thr, 0.0);
    w(k) = mu >= 0.0 ? shrunk : -shrunk;
    if (shrunk > 0.0) ++kept;
  }
  DenoiseResult res;
  res.Z = reconstruct(s.eigenvectors, w);
  res.kept_rank = kept;
  res.shift = thr;
  return res;
}

/// Best rank-r approximation: keep the r spectral components of largest
/// absolute eigenvalue, zero the rest. Ties at equal |eigenvalue| keep the
/// larger signed eigenvalue first, then the lower index.
inline DenoiseResult hard_threshold_rank(const SymMatrix& a, int r) {
  if (r < 0 || r > a.dim()) throw std::invalid_argument("hard_threshold_rank: need 0 <= r <= d");
  Spectrum s = eigh(a);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(a.dim()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
    const double ax = std::abs(s.eigenvalues(x)), ay = std::abs(s.eigenvalues(y));
    if (ax != ay) return ax > ay;
    if (s.eigenvalues(x) != s.eigenvalues(y)) return s.eigenvalues(x) > s.eigenvalues(y);
    return x < y;
  });
  Vector w = Vector::Zero(a.dim());
  int kept = 0;
  for (int k = 0; k < r; ++k) {
    const Eigen::Index idx = order[static_cast<std::size_t>(k)];
    w(idx) = s.eigenvalues(idx);
    if (w(idx) != 0.0) ++kept;
  }
  DenoiseResult res;
  res.Z = reconstruct(s.eigenvectors, w);
  res.kept_rank = kept;
  res.shift = 0.0;
  return res;
}

/// Residual-corrected, rank-projected estimate built from a convex solution:
/// rank-r truncation of Z + X*(y - X(Z)). For a rank-r solution under the
/// good event this adds the regularization shift back onto the retained
/// eigenvalues.
inline DenoiseResult debias_convex(const MeasurementSet& ms, const SymMatrix& z, int r) {
  if (r < 1) throw std::invalid_argument("debias_convex: r must be >= 1");
  const SymMatrix corrected = z + ms.adjoint(ms.y - ms.apply(z));
  return hard_threshold_rank(corrected, r);
}

/// U * (I + lambda (U^T U)^{-1})^{1/2}; lifts the top-r eigenvalues of UU^T
/// by exactly lambda. Throws std::domain_error when U^T U is rank deficient.
inline FactorMatrix debias_factored(const FactorMatrix& u, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("debias_factored: lambda must be >= 0");
  const Matrix gram = u.transpose() * u;
  Spectrum s = eigh(SymMatrix::from_symmetric(gram, 1e-8));
  const double top = s.eigenvalues(0);
  if (top <= 0.0 || s.eigenvalues(s.eigenvalues.size() - 1) <= 1e-10 * top)
    throw std::domain_error("debias_factored: U^T U is rank deficient");
  // (I + lambda G^{-1})^{1/2} through the eigenbasis of G.
  Vector w = (1.0 + lambda * s.eigenvalues.array().inverse()).sqrt();
  return u * reconstruct(s.eigenvectors, w).mat();
}

}  // namespace matsense
