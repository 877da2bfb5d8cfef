#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "matsense/linalg.hpp"
#include "matsense/rng.hpp"

namespace matsense {

// ---------------------------------------------------------------------------
// Problem instances: M = (sqrt(d)/lambda_r(UU^T)) * UU^T with U ~ N(0,1)^{d x r},
// so the smallest nonzero eigenvalue of M is exactly sqrt(d).
// ---------------------------------------------------------------------------

struct ProblemInstance {
  int d = 0;
  int r = 0;
  double sigma = 0.0;
  SymMatrix M;
  FactorMatrix Ustar;  // M == Ustar * Ustar^T
  Vector eigvals;      // the r positive eigenvalues of M, descending
  double kappa = 0.0;  // eigvals(0) / eigvals(r-1)
  double snr = 0.0;    // eigvals(r-1) / (sigma * sqrt(d))
  std::uint64_t seed = 0;
  int resamples = 0;   // degenerate draws discarded before this one
};

inline ProblemInstance generate_instance(int d, int r, double sigma, std::uint64_t seed) {
  if (r < 1 || r > d) throw std::invalid_argument("generate_instance: need 1 <= r <= d");
  if (sigma <= 0.0) throw std::invalid_argument("generate_instance: sigma must be > 0");
  constexpr int kMaxResamples = 64;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    RngStream rng(seed, static_cast<std::uint64_t>(attempt));
    FactorMatrix u(d, r);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < r; ++k) u(i, k) = rng.gaussian();
    SymMatrix raw = SymMatrix::from_upper(u * u.transpose());
    Spectrum spec = eigh(raw);
    const double lam_r = spec.eigenvalues(r - 1);
    if (lam_r <= 1e-12) continue;  // degenerate draw, next stream
    const double scale = std::sqrt(static_cast<double>(d)) / lam_r;
    ProblemInstance inst;
    inst.d = d;
    inst.r = r;
    inst.sigma = sigma;
    inst.M = scale * raw;
    inst.Ustar = std::sqrt(scale) * u;
    inst.eigvals = scale * spec.eigenvalues.head(r);
    inst.kappa = inst.eigvals(0) / inst.eigvals(r - 1);
    inst.snr = inst.eigvals(r - 1) / (sigma * std::sqrt(static_cast<double>(d)));
    inst.seed = seed;
    inst.resamples = attempt;
    return inst;
  }
  throw std::runtime_error("generate_instance: repeated degenerate draws");
}

// ---------------------------------------------------------------------------
// Measurements y_i = <X_i, M>/sqrt(n) + eps_i with X_i ~ GOE(d).
//
// Sensing matrices are held as packed rows [diag(X); sqrt(2)*upper(X)] so both
// the forward map and the adjoint are single matrix-vector products; for
// symmetric A, B the packed dot product equals <A, B>.  Above the memory cap
// the set switches to a replay handle that regenerates each row on demand from
// its own substream, so both modes produce identical data.
// ---------------------------------------------------------------------------

struct MeasurementOptions {
  std::size_t memory_cap_bytes = std::size_t(1) << 30;
  bool force_replay = false;
};

class MeasurementSet {
 public:
  using PackedRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int n = 0;
  int d = 0;
  int r = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double gamma_n = 0.0;  // n / (d*r)
  Vector eps;
  Vector y;

  bool materialized() const { return materialized_; }
  bool auto_switched_to_replay() const { return auto_switched_; }
  std::string mode() const { return materialized_ ? "materialized" : "replay"; }
  Eigen::Index packed_dim() const { return static_cast<Eigen::Index>(d) * (d + 1) / 2; }

  /// Packed representation of a symmetric matrix: [diag; sqrt(2)*upper].
  Vector pack(const SymMatrix& z) const {
    if (z.dim() != d) throw std::invalid_argument("MeasurementSet::pack: dimension mismatch");
    Vector p(packed_dim());
    const double sq2 = std::sqrt(2.0);
    Eigen::Index k = d;
    for (int i = 0; i < d; ++i) {
      p(i) = z(i, i);
      for (int j = i + 1; j < d; ++j) p(k++) = sq2 * z(i, j);
    }
    return p;
  }

  SymMatrix unpack(const Vector& p) const {
    Matrix m(d, d);
    const double half = std::sqrt(0.5);
    Eigen::Index k = d;
    for (int i = 0; i < d; ++i) {
      m(i, i) = p(i);
      for (int j = i + 1; j < d; ++j) m(i, j) = half * p(k++);
    }
    return SymMatrix::from_upper(std::move(m));
  }

  /// (X(Z))_i = <X_i, Z>/sqrt(n).
  Vector apply(const SymMatrix& z) const {
    const Vector p = pack(z);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    if (materialized_) return inv_sqrt_n * (xp_ * p);
    Vector out(n);
    Vector row(packed_dim());
    for (int i = 0; i < n; ++i) {
      regenerate_row(i, row);
      out(i) = inv_sqrt_n * row.dot(p);
    }
    return out;
  }

  /// X*(v) = (1/sqrt(n)) sum_i v_i X_i.
  SymMatrix adjoint(const Vector& v) const {
    if (v.size() != n) throw std::invalid_argument("MeasurementSet::adjoint: length mismatch");
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    if (materialized_) return unpack(inv_sqrt_n * (xp_.transpose() * v));
    Vector acc = Vector::Zero(packed_dim());
    Vector row(packed_dim());
    for (int i = 0; i < n; ++i) {
      regenerate_row(i, row);
      acc += v(i) * row;
    }
    return unpack(inv_sqrt_n * acc);
  }

  /// The i-th sensing matrix (unpacked; regenerated in replay mode).
  SymMatrix sensing_matrix(int i) const {
    if (i < 0 || i >= n) throw std::out_of_range("MeasurementSet::sensing_matrix");
    if (materialized_) return unpack(xp_.row(i).transpose());
    Vector row(packed_dim());
    regenerate_row(i, row);
    return unpack(row);
  }

  static MeasurementSet generate(const ProblemInstance& inst, int n, std::uint64_t seed,
                                 const MeasurementOptions& opts = {}) {
    if (n < 1) throw std::invalid_argument("generate_measurements: n must be >= 1");
    MeasurementSet ms;
    ms.n = n;
    ms.d = inst.d;
    ms.r = inst.r;
    ms.sigma = inst.sigma;
    ms.seed = seed;
    ms.gamma_n = static_cast<double>(n) / (static_cast<double>(inst.d) * inst.r);
    const std::size_t need =
        static_cast<std::size_t>(n) * static_cast<std::size_t>(ms.packed_dim()) * sizeof(double);
    ms.materialized_ = !opts.force_replay && need <= opts.memory_cap_bytes;
    ms.auto_switched_ = !opts.force_replay && !ms.materialized_;

    RngStream eps_rng(seed, kEpsStream);
    ms.eps.resize(n);
    for (int i = 0; i < n; ++i) ms.eps(i) = inst.sigma * eps_rng.gaussian();

    const Vector pm = ms.pack(inst.M);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    ms.y.resize(n);
    if (ms.materialized_) ms.xp_.resize(n, ms.packed_dim());
    Vector row(ms.packed_dim());
    for (int i = 0; i < n; ++i) {
      ms.regenerate_row(i, row);
      ms.y(i) = inv_sqrt_n * row.dot(pm) + ms.eps(i);
      if (ms.materialized_) ms.xp_.row(i) = row.transpose();
    }
    return ms;
  }

  static constexpr std::uint64_t kXStream = 1;
  static constexpr std::uint64_t kEpsStream = 2;
  static constexpr std::uint64_t kProbeStream = 3;

 private:
  // GOE row in packed form, one substream per matrix. Draw order matches
  // sample_goe (row-major upper triangle); a packed off-diagonal entry is the
  // raw N(0,1) draw since sqrt(2) * N(0,1/2) has unit variance.
  void regenerate_row(int i, Vector& row) const {
    RngStream rng = RngStream(seed, kXStream).substream(static_cast<std::uint64_t>(i));
    Eigen::Index k = d;
    for (int a = 0; a < d; ++a) {
      row(a) = rng.gaussian();
      for (int b = a + 1; b < d; ++b) row(k++) = rng.gaussian();
    }
  }

  PackedRows xp_;
  bool materialized_ = true;
  bool auto_switched_ = false;
};

inline MeasurementSet generate_measurements(const ProblemInstance& inst, int n,
                                            std::uint64_t seed,
                                            const MeasurementOptions& opts = {}) {
  return MeasurementSet::generate(inst, n, seed, opts);
}

inline Vector apply_X(const MeasurementSet& ms, const SymMatrix& z) { return ms.apply(z); }

inline SymMatrix adjoint_X(const MeasurementSet& ms, const Vector& v) { return ms.adjoint(v); }

// ---------------------------------------------------------------------------
// Empirical check of the good event: bounded noise spectral norm, restricted
// isometry on low-rank probes, bounded noise-signal correlation.
// ---------------------------------------------------------------------------

struct GoodEventReport {
  double noise_spectral_norm = 0.0;  // ||(1/n) sum_i eps_i X_i||
  double noise_bound = 0.0;          // 8 sigma sqrt(d/n)
  double rip_delta_hat = 0.0;        // max over probes of | ||X(A)||^2 - ||A||_F^2 | / ||A||_F^2
  double rip_delta_max = 0.0;        // pass threshold applied to rip_delta_hat
  double corr_hat = 0.0;             // max over probes of |(1/n) sum_i eps_i <X_i, A>|
  double corr_bound = 0.0;           // c_corr * sigma * sqrt(dr/n)
  int num_probes = 0;
  int rip_rank = 0;
  bool noise_passed = false;
  bool rip_passed = false;
  bool corr_passed = false;

  bool passed() const { return noise_passed && rip_passed && corr_passed; }
};

/// Random unit-Frobenius symmetric matrix of exact rank k (a.s.).
inline SymMatrix random_low_rank_probe(int d, int k, RngStream& rng) {
  Matrix g(d, k);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) g(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  Vector w(k);
  for (int j = 0; j < k; ++j) w(j) = rng.gaussian();
  w /= w.norm();
  return reconstruct(q, w);
}

/// Probe-based verification. The probe maxima are lower bounds on the true
/// suprema over all rank-limited matrices (certifying the exact restricted
/// isometry constant is NP-hard); report num_probes alongside so results are
/// comparable across runs.
inline GoodEventReport check_good_event(const MeasurementSet& ms, const ProblemInstance& inst,
                                        int num_probes = 100, int rip_rank = 0,
                                        double c_corr = 4.0, double rip_delta_max = 0.5) {
  if (num_probes < 1) throw std::invalid_argument("check_good_event: num_probes must be >= 1");
  GoodEventReport rep;
  rep.num_probes = num_probes;
  rep.rip_rank = rip_rank > 0 ? rip_rank : 2 * inst.r;
  rep.rip_delta_max = rip_delta_max;

  const double sqrt_n = std::sqrt(static_cast<double>(ms.n));
  rep.noise_spectral_norm = spectral_norm(ms.adjoint(ms.eps)) / sqrt_n;
  rep.noise_bound = 8.0 * inst.sigma * std::sqrt(static_cast<double>(ms.d) / ms.n);

  RngStream probe_root(ms.seed, MeasurementSet::kProbeStream);
  for (int p = 0; p < num_probes; ++p) {
    RngStream rng = probe_root.substream(static_cast<std::uint64_t>(p));
    SymMatrix a = random_low_rank_probe(ms.d, rep.rip_rank, rng);
    const Vector xa = ms.apply(a);
    const double f2 = a.mat().squaredNorm();
    rep.rip_delta_hat = std::max(rep.rip_delta_hat, std::abs(xa.squaredNorm() - f2) / f2);
    rep.corr_hat = std::max(rep.corr_hat, std::abs(ms.eps.dot(xa)) / sqrt_n);
  }
  rep.corr_bound =
      c_corr * inst.sigma * std::sqrt(static_cast<double>(ms.d) * inst.r / ms.n);

  rep.noise_passed = rep.noise_spectral_norm <= rep.noise_bound;
  rep.rip_passed = rep.rip_delta_hat <= rep.rip_delta_max;
  rep.corr_passed = rep.corr_hat <= rep.corr_bound;
  return rep;
}

/// Instance/measurement metadata as a flat key = value file.
inline void write_measurement_metadata(const std::string& path, const MeasurementSet& ms) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_measurement_metadata: cannot open " + path);
  out << "d = " << ms.d << "\n"
      << "r = " << ms.r << "\n"
      << "sigma = " << ms.sigma << "\n"
      << "seed = " << ms.seed << "\n"
      << "n = " << ms.n << "\n"
      << "mode = " << ms.mode() << "\n";
}

}  // namespace matsense
