#pragma once

#include <cmath>
#include <stdexcept>

#include "matsense/denoise.hpp"
#include "matsense/sensing.hpp"

namespace matsense {

struct MCEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

namespace detail {

inline MCEstimate summarize(const Vector& samples) {
  MCEstimate e;
  e.samples = static_cast<int>(samples.size());
  e.value = samples.mean();
  if (e.samples > 1) {
    const double var = (samples.array() - e.value).square().sum() / (e.samples - 1);
    e.std_error = std::sqrt(var / e.samples);
  }
  return e;
}

}  // namespace detail

/// Monte-Carlo estimates of the denoising risk and the effective degrees of
/// freedom at thresholding scale (tau, zeta):
///   R  = (1/dr) E || ST_psd(M + tau H, lambda/zeta) - M ||_F^2
///   df = (1/tau) E < H, ST_psd(M + tau H, lambda/zeta) >
/// Shared H draws (one substream per draw, summed in draw order).
struct RiskAndDf {
  MCEstimate R;
  MCEstimate df;
};

inline RiskAndDf estimate_R_df(const ProblemInstance& inst, double tau, double zeta,
                               double lambda, int mc, const RngStream& rng) {
  if (tau < 0.0 || zeta <= 0.0) throw std::invalid_argument("estimate_R_df: need tau >= 0, zeta > 0");
  if (mc < 1) throw std::invalid_argument("estimate_R_df: mc must be >= 1");
  const double thr = lambda / zeta;
  const double dr = static_cast<double>(inst.d) * inst.r;
  Vector rs(mc), dfs(mc);
  for (int j = 0; j < mc; ++j) {
    RngStream draw = rng.substream(static_cast<std::uint64_t>(j));
    const SymMatrix h = sample_goe(inst.d, draw);
    SymMatrix noisy = inst.M;
    noisy += tau * h;
    const SymMatrix z = soft_threshold_psd(noisy, thr).Z;
    rs(j) = (z - inst.M).mat().squaredNorm() / dr;
    dfs(j) = tau > 0.0 ? frobenius_inner(h, z) / tau : 0.0;
  }
  return {detail::summarize(rs), detail::summarize(dfs)};
}

inline MCEstimate estimate_R(const ProblemInstance& inst, double tau, double zeta,
                             double lambda, int mc, const RngStream& rng) {
  return estimate_R_df(inst, tau, zeta, lambda, mc, rng).R;
}

inline MCEstimate estimate_df(const ProblemInstance& inst, double tau, double zeta,
                              double lambda, int mc, const RngStream& rng) {
  return estimate_R_df(inst, tau, zeta, lambda, mc, rng).df;
}

// ---------------------------------------------------------------------------
// Fixed-point system in (tau, zeta):
//   tau^2 = sigma^2 + (dr/n) R(tau^2, zeta)
//   zeta  = 1 - df(tau^2, zeta) / n
// solved by damped Picard iteration from (sigma, 1) with common random
// numbers across iterations; convergence is certified with a fresh seed.
// ---------------------------------------------------------------------------

struct FixedPointOptions {
  int mc = 200;
  double damping = 0.5;
  double tol = 1e-2;
  int max_iter = 100;
};

struct FixedPointSolution {
  double tau_star = 0.0;
  double zeta_star = 0.0;
  // The two beta conventions; psi*-stationarity singles out the product form,
  // which beta_star carries.
  double beta_star = 0.0;
  double beta_product = 0.0;  // zeta* tau*
  double beta_ratio = 0.0;    // zeta* / tau*
  int iterations = 0;
  int mc_samples = 0;
  double residual_tau = 0.0;   // |tau^2 - sigma^2 - (dr/n) R|, fresh seed
  double residual_zeta = 0.0;  // |zeta - 1 + df/n|, fresh seed
  double residual_tau_std_error = 0.0;
  double residual_zeta_std_error = 0.0;
  bool converged = false;
  bool zeta_clamped = false;
};

inline FixedPointSolution solve_fixed_point(const ProblemInstance& inst, double lambda,
                                            double n, const FixedPointOptions& opts,
                                            const RngStream& rng) {
  if (opts.damping <= 0.0 || opts.damping > 1.0)
    throw std::invalid_argument("solve_fixed_point: damping must be in (0,1]");
  if (opts.tol <= 0.0) throw std::invalid_argument("solve_fixed_point: tol must be > 0");
  const double dr = static_cast<double>(inst.d) * inst.r;
  const double sigma2 = inst.sigma * inst.sigma;
  const RngStream crn = rng.substream(0);    // shared across iterations
  const RngStream fresh = rng.substream(1);  // convergence certificate

  FixedPointSolution sol;
  sol.mc_samples = opts.mc;
  double tau2 = sigma2;
  double zeta = 1.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    sol.iterations = it + 1;
    const RiskAndDf est = estimate_R_df(inst, std::sqrt(tau2), zeta, lambda, opts.mc, crn);
    const double tau2_target = sigma2 + (dr / n) * est.R.value;
    const double zeta_target = 1.0 - est.df.value / n;
    const bool settled = std::abs(tau2 - tau2_target) <= opts.tol &&
                         std::abs(zeta - zeta_target) <= opts.tol;
    if (settled) {
      const RiskAndDf cert = estimate_R_df(inst, std::sqrt(tau2), zeta, lambda, opts.mc,
                                           fresh.substream(static_cast<std::uint64_t>(it)));
      sol.residual_tau = std::abs(tau2 - sigma2 - (dr / n) * cert.R.value);
      sol.residual_zeta = std::abs(zeta - 1.0 + cert.df.value / n);
      sol.residual_tau_std_error = (dr / n) * cert.R.std_error;
      sol.residual_zeta_std_error = cert.df.std_error / n;
      const double slack_tau = opts.tol + 3.0 * sol.residual_tau_std_error;
      const double slack_zeta = opts.tol + 3.0 * sol.residual_zeta_std_error;
      if (sol.residual_tau <= slack_tau && sol.residual_zeta <= slack_zeta) {
        sol.converged = true;
        break;
      }
    }
    tau2 = (1.0 - opts.damping) * tau2 + opts.damping * tau2_target;
    zeta = (1.0 - opts.damping) * zeta + opts.damping * zeta_target;
    if (zeta <= 0.0) {
      zeta = 1e-6;
      sol.zeta_clamped = true;
    }
  }
  sol.tau_star = std::sqrt(tau2);
  sol.zeta_star = zeta;
  sol.beta_product = zeta * sol.tau_star;
  sol.beta_ratio = zeta / sol.tau_star;
  sol.beta_star = sol.beta_product;
  return sol;
}

// ---------------------------------------------------------------------------
// Scalarized comparison objects.
// ---------------------------------------------------------------------------

/// Monte-Carlo evaluation of
///   psi*(tau, beta) = (sigma^2/tau + tau) (gamma_n beta / 2) - gamma_n beta^2/2
///     + E min_{Z >= 0} [ beta ||Z-M||_F^2 / (2 dr tau) + beta <H, Z-M>/dr
///                        + (lambda/dr)(||Z||_* - ||M||_*) ].
/// The inner minimizer is ST_psd(M - tau H, lambda tau / beta) per draw; its
/// objective value is evaluated exactly there. std_error covers the
/// Monte-Carlo part only (the leading terms are deterministic).
inline MCEstimate evaluate_psi_star(const ProblemInstance& inst, double tau, double beta,
                                    double lambda, double n, int mc, const RngStream& rng) {
  if (tau <= 0.0 || beta <= 0.0)
    throw std::invalid_argument("evaluate_psi_star: need tau > 0, beta > 0");
  const double dr = static_cast<double>(inst.d) * inst.r;
  const double gamma_n = n / dr;
  const double thr = lambda * tau / beta;
  const double m_nuclear = inst.M.trace();  // PSD: nuclear norm is the trace
  Vector inner(mc);
  for (int j = 0; j < mc; ++j) {
    RngStream draw = rng.substream(static_cast<std::uint64_t>(j));
    const SymMatrix h = sample_goe(inst.d, draw);
    SymMatrix shifted = inst.M;
    shifted -= tau * h;
    const SymMatrix z = soft_threshold_psd(shifted, thr).Z;
    const SymMatrix diff = z - inst.M;
    inner(j) = beta * diff.mat().squaredNorm() / (2.0 * dr * tau) +
               beta * frobenius_inner(h, diff) / dr +
               (lambda / dr) * (z.trace() - m_nuclear);
  }
  MCEstimate est = detail::summarize(inner);
  est.value += (inst.sigma * inst.sigma / tau + tau) * gamma_n * beta / 2.0 -
               gamma_n * beta * beta / 2.0;
  return est;
}

struct McgmtValue {
  double value = 0.0;
  bool shifted_psd = true;  // false warns that W + M left the PSD cone
};

/// Pointwise scalar comparison objective:
///   (gamma_n/2) ( sqrt(||W||_F^2/n + sigma^2) ||g||/sqrt(n) - <H,W>/n )_+^2
///   + (lambda/dr) ( ||W+M||_* - ||M||_* ).
inline McgmtValue evaluate_mcgmt_objective(const ProblemInstance& inst, const SymMatrix& w,
                                           double lambda, double n, const Vector& g,
                                           const SymMatrix& h) {
  const double dr = static_cast<double>(inst.d) * inst.r;
  const double gamma_n = n / dr;
  McgmtValue out;
  SymMatrix shifted = w + inst.M;
  Spectrum spec = eigh(shifted);
  out.shifted_psd =
      spec.eigenvalues(spec.eigenvalues.size() - 1) >= -1e-8 * std::max(1.0, spec.eigenvalues.cwiseAbs().maxCoeff());
  const double raw = std::sqrt(w.mat().squaredNorm() / n + inst.sigma * inst.sigma) *
                         g.norm() / std::sqrt(n) -
                     frobenius_inner(h, w) / n;
  const double plus = std::max(raw, 0.0);
  const double penalty =
      (lambda / dr) * (spec.eigenvalues.cwiseAbs().sum() - inst.M.trace());
  out.value = 0.5 * gamma_n * plus * plus + penalty;
  return out;
}

}  // namespace matsense
