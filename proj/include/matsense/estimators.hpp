#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "matsense/denoise.hpp"
#include "matsense/io.hpp"
#include "matsense/sensing.hpp"

namespace matsense {

// ---------------------------------------------------------------------------
// Objectives and derivatives.
// ---------------------------------------------------------------------------

/// (1/2) sum_i (y_i - <X_i,Z>/sqrt(n))^2 + lambda ||Z||_*.
inline double convex_objective(const MeasurementSet& ms, const SymMatrix& z, double lambda) {
  const double fit = 0.5 * (ms.y - ms.apply(z)).squaredNorm();
  return lambda > 0.0 ? fit + lambda * nuclear_norm(z) : fit;
}

/// Gradient of the smooth part: X*(X(Z) - y).
inline SymMatrix convex_smooth_gradient(const MeasurementSet& ms, const SymMatrix& z) {
  return ms.adjoint(ms.apply(z) - ms.y);
}

/// Proximal map of thr*||.||_* restricted to the PSD cone (eigenvalue
/// soft-thresholding with the negative part clamped).
inline SymMatrix prox_nuclear_psd(const SymMatrix& a, double thr) {
  return soft_threshold_psd(a, thr).Z;
}

/// (1/4) sum_i (y_i - <X_i,UU^T>/sqrt(n))^2 + (lambda/2) ||U||_F^2.
inline double ncvx_objective(const MeasurementSet& ms, const FactorMatrix& u, double lambda) {
  const SymMatrix uut = SymMatrix::from_upper(u * u.transpose());
  double val = 0.25 * (ms.y - ms.apply(uut)).squaredNorm();
  if (lambda != 0.0) val += 0.5 * lambda * u.squaredNorm();
  return val;
}

/// X*(X(UU^T) - y) U + lambda U.
inline FactorMatrix ncvx_gradient(const MeasurementSet& ms, const FactorMatrix& u, double lambda) {
  const SymMatrix uut = SymMatrix::from_upper(u * u.transpose());
  FactorMatrix g = ms.adjoint(ms.apply(uut) - ms.y).mat() * u;
  if (lambda != 0.0) g += lambda * u;
  return g;
}

/// Quadratic form of the second derivative of the factored objective along V,
/// evaluated from observed data only:
///   (1/n) sum <X_i, UV^T+VU^T> <X_i U, V>
///   + (1/sqrt(n)) sum (<X_i,UU^T>/sqrt(n) - y_i) <X_i V, V>
///   + lambda ||V||_F^2.
/// Both sums reduce to forward-map evaluations: <X_i U, V> = <X_i, VU^T> and
/// <X_i V, V> = <X_i, VV^T> for symmetric X_i.
inline double hessian_quadratic_form(const MeasurementSet& ms, const FactorMatrix& u,
                                     const FactorMatrix& v, double lambda) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw std::invalid_argument("hessian_quadratic_form: dimension mismatch");
  const SymMatrix cross = SymMatrix::from_upper(
      (u * v.transpose() + v * u.transpose()).eval());
  const Vector xc = ms.apply(cross);
  const SymMatrix uut = SymMatrix::from_upper(u * u.transpose());
  const SymMatrix vvt = SymMatrix::from_upper(v * v.transpose());
  const Vector residual = ms.apply(uut) - ms.y;
  return 0.5 * xc.squaredNorm() + residual.dot(ms.apply(vvt)) + lambda * v.squaredNorm();
}

// ---------------------------------------------------------------------------
// Solvers.
// ---------------------------------------------------------------------------

enum class SolverInit { kZero, kSpectral, kGroundTruth, kGiven };

struct SolverConfig {
  double step = 0.01;
  double tol = 0.01;
  long max_iter = 200000;
  SolverInit init = SolverInit::kZero;
  Matrix init_matrix;  // used when init == kGiven
  bool record_trace = false;

  void validate() const {
    if (step <= 0.0) throw std::invalid_argument("SolverConfig: step must be > 0");
    if (tol <= 0.0) throw std::invalid_argument("SolverConfig: tol must be > 0");
    if (max_iter < 1) throw std::invalid_argument("SolverConfig: max_iter must be >= 1");
  }
};

struct TracePoint {
  long iter = 0;
  double objective = 0.0;
  double residual = 0.0;
};

struct ConvexSolution {
  SymMatrix Z;
  long iterations = 0;
  double final_residual = 0.0;  // ||Z_{k+1} - Z_k||_F / step at exit
  double objective_value = 0.0;
  bool converged = false;
  bool objective_increased = false;
  std::vector<TracePoint> trace;
};

struct FactoredSolution {
  FactorMatrix U;
  long iterations = 0;
  double final_grad_norm = 0.0;
  double objective_value = 0.0;
  bool converged = false;
  bool diverged = false;
  std::vector<TracePoint> trace;
};

/// Largest eigenvalue of Z -> X*(X(Z)) by power iteration; a Lipschitz
/// estimate for the smooth part of the convex objective.
inline double estimate_smooth_lipschitz(const MeasurementSet& ms, int iters = 30,
                                        std::uint64_t seed = 0) {
  RngStream rng(seed, 0x11b5);
  SymMatrix z = sample_goe(ms.d, rng);
  double lam = 0.0;
  for (int k = 0; k < iters; ++k) {
    z *= 1.0 / z.frobenius_norm();
    SymMatrix az = ms.adjoint(ms.apply(z));
    lam = frobenius_inner(z, az);
    z = az;
  }
  return lam;
}

/// Proximal gradient descent for the nuclear-norm penalized least squares
/// over the PSD cone. Stops when ||Z_{k+1} - Z_k||_F / step <= tol (the
/// proximal gradient mapping norm; the nonsmooth objective has no plain
/// gradient). The objective is checked periodically and a nonmonotone step
/// is reported through `objective_increased`.
inline ConvexSolution solve_convex(const MeasurementSet& ms, double lambda,
                                   const SolverConfig& cfg,
                                   const SymMatrix* ground_truth = nullptr) {
  cfg.validate();
  if (lambda < 0.0) throw std::invalid_argument("solve_convex: lambda must be >= 0");
  SymMatrix z;
  switch (cfg.init) {
    case SolverInit::kZero:
      z = SymMatrix::zero(ms.d);
      break;
    case SolverInit::kSpectral:
      // PSD part of X*(y): clamp negative eigenvalues.
      z = soft_threshold_psd(ms.adjoint(ms.y), 0.0).Z;
      break;
    case SolverInit::kGroundTruth:
      if (!ground_truth) throw std::invalid_argument("solve_convex: ground truth not supplied");
      z = *ground_truth;
      break;
    case SolverInit::kGiven:
      z = SymMatrix::from_symmetric(cfg.init_matrix, 1e-8);
      break;
  }

  ConvexSolution sol;
  constexpr long kObjectiveCheckEvery = 25;
  double last_checked_objective = std::numeric_limits<double>::infinity();
  for (long k = 0; k < cfg.max_iter; ++k) {
    SymMatrix step_point = z;
    step_point -= cfg.step * convex_smooth_gradient(ms, z);
    SymMatrix znext = prox_nuclear_psd(step_point, cfg.step * lambda);
    const double residual = (znext - z).frobenius_norm() / cfg.step;
    z = znext;
    sol.iterations = k + 1;
    sol.final_residual = residual;
    if (cfg.record_trace || (k % kObjectiveCheckEvery) == 0) {
      const double obj = convex_objective(ms, z, lambda);
      if (obj > last_checked_objective * (1.0 + 1e-12)) sol.objective_increased = true;
      last_checked_objective = obj;
      if (cfg.record_trace) sol.trace.push_back({k + 1, obj, residual});
    }
    if (residual <= cfg.tol) {
      sol.converged = true;
      break;
    }
  }
  sol.Z = z;
  sol.objective_value = convex_objective(ms, z, lambda);
  return sol;
}

/// Spectral initialization for the factored solver: top-r eigenpairs of
/// X*(y) with eigenvalue square roots (negative eigenvalues floored at 0).
inline FactorMatrix spectral_init(const MeasurementSet& ms, int r) {
  Spectrum s = eigh(ms.adjoint(ms.y));
  FactorMatrix u(ms.d, r);
  for (int k = 0; k < r; ++k)
    u.col(k) = std::sqrt(std::max(s.eigenvalues(k), 0.0)) * s.eigenvectors.col(k);
  return u;
}

/// Plain gradient descent on the factored objective. Stops when the gradient
/// Frobenius norm drops below tol. A divergence detector aborts when the
/// objective exceeds 10^3 times its initial value.
inline FactoredSolution solve_factored(const MeasurementSet& ms, int r, double lambda,
                                       const SolverConfig& cfg,
                                       const FactorMatrix* ground_truth = nullptr) {
  cfg.validate();
  if (r < 1 || r > ms.d) throw std::invalid_argument("solve_factored: need 1 <= r <= d");
  FactorMatrix u;
  switch (cfg.init) {
    case SolverInit::kZero:
      u = FactorMatrix::Zero(ms.d, r);
      break;
    case SolverInit::kSpectral:
      u = spectral_init(ms, r);
      break;
    case SolverInit::kGroundTruth:
      if (!ground_truth) throw std::invalid_argument("solve_factored: ground truth not supplied");
      u = *ground_truth;
      break;
    case SolverInit::kGiven:
      u = cfg.init_matrix;
      break;
  }
  if (u.rows() != ms.d || u.cols() != r)
    throw std::invalid_argument("solve_factored: init has wrong dimensions");

  FactoredSolution sol;
  const double initial_objective = ncvx_objective(ms, u, lambda);
  constexpr long kDivergenceCheckEvery = 50;
  for (long k = 0; k < cfg.max_iter; ++k) {
    const FactorMatrix g = ncvx_gradient(ms, u, lambda);
    const double gnorm = g.norm();
    sol.iterations = k;
    sol.final_grad_norm = gnorm;
    if (!std::isfinite(gnorm)) {
      sol.diverged = true;
      break;
    }
    if (cfg.record_trace)
      sol.trace.push_back({k, ncvx_objective(ms, u, lambda), gnorm});
    if (gnorm <= cfg.tol) {
      sol.converged = true;
      break;
    }
    u -= cfg.step * g;
    if ((k % kDivergenceCheckEvery) == kDivergenceCheckEvery - 1) {
      const double obj = ncvx_objective(ms, u, lambda);
      if (!(obj <= 1e3 * std::max(initial_objective, 1e-300))) {
        sol.diverged = true;
        break;
      }
    }
  }
  sol.U = u;
  sol.objective_value = ncvx_objective(ms, u, lambda);
  return sol;
}

/// Per-iteration trace as CSV (iter, objective, residual).
inline void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace) {
  CsvWriter csv(path);
  csv.row({"iter", "objective", "residual"});
  for (const auto& t : trace)
    csv.row({std::to_string(t.iter), csv_format(t.objective), csv_format(t.residual)});
}

}  // namespace matsense
