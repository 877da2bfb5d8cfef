#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "matsense/estimators.hpp"
#include "matsense/fixed_point.hpp"
#include "matsense/io.hpp"

namespace matsense {

// ---------------------------------------------------------------------------
// Closed-form error predictions on the (1/(2d))||.||_F^2 axis, as functions of
// the normalized eigenvalues (eigenvalues of M divided by sqrt(d)).
// ---------------------------------------------------------------------------

inline double theory_mse_hard(const Vector& eigvals_normalized, double sigma) {
  const double s2 = sigma * sigma;
  double sum = 2.0 * static_cast<double>(eigvals_normalized.size());
  for (Eigen::Index i = 0; i < eigvals_normalized.size(); ++i)
    sum += 3.0 * s2 / (eigvals_normalized(i) * eigvals_normalized(i));
  return 0.5 * s2 * sum;
}

inline double theory_mse_soft(const Vector& eigvals_normalized, double sigma,
                              double lambda_over_sqrtd) {
  const double s2 = sigma * sigma;
  double sum = 2.0 * static_cast<double>(eigvals_normalized.size());
  for (Eigen::Index i = 0; i < eigvals_normalized.size(); ++i) {
    const double gap = eigvals_normalized(i) - lambda_over_sqrtd;
    if (gap <= 0.0)
      throw std::domain_error(
          "theory_mse_soft: requires eigvals_normalized > lambda/sqrt(d)");
    sum += 3.0 * s2 / (gap * gap);
  }
  return 0.5 * s2 * sum;
}

// ---------------------------------------------------------------------------
// 1-Lipschitz probe functions of the (1/sqrt(dr))-scaled matrix argument.
// ---------------------------------------------------------------------------

struct LipschitzProbe {
  enum class Kind { kFrobDistToM, kClippedEntry, kSpectralClip };
  Kind kind = Kind::kFrobDistToM;
  int i = 0, j = 0;     // for kClippedEntry
  double clip = 1.0;    // for kClippedEntry / kSpectralClip

  /// scaled_arg is the estimator divided by sqrt(dr); scaled_m is M/sqrt(dr).
  double operator()(const SymMatrix& scaled_arg, const SymMatrix& scaled_m) const {
    switch (kind) {
      case Kind::kFrobDistToM:
        return (scaled_arg - scaled_m).frobenius_norm();
      case Kind::kClippedEntry:
        return std::clamp(scaled_arg(i, j), -clip, clip);
      case Kind::kSpectralClip:
        return std::min(spectral_norm(scaled_arg), clip);
    }
    return 0.0;
  }

  static LipschitzProbe parse(const std::string& name, int i, int j, double clip) {
    LipschitzProbe p;
    p.i = i; p.j = j; p.clip = clip;
    if (name == "frob_dist_to_M") p.kind = Kind::kFrobDistToM;
    else if (name == "clipped_entry") p.kind = Kind::kClippedEntry;
    else if (name == "spectral_clip") p.kind = Kind::kSpectralClip;
    else throw ConfigError("unknown probe kind: " + name);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Worker pool: independent jobs over disjoint stream ids, results collected
// in job order regardless of completion order. MATSENSE_THREADS caps the
// worker count.
// ---------------------------------------------------------------------------

inline int worker_count(std::size_t jobs) {
  int cap = 0;
  if (const char* env = std::getenv("MATSENSE_THREADS")) cap = std::atoi(env);
  if (cap <= 0) cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap <= 0) cap = 1;
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cap), jobs));
}

inline void parallel_for_indexed(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const int workers = worker_count(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Replicate comparison study.
// ---------------------------------------------------------------------------

enum class EstimatorKind { kConvex, kFactored0, kFactoredLambda, kDebiased, kSoftOracle, kHardOracle };

inline EstimatorKind parse_estimator(const std::string& name) {
  if (name == "convex") return EstimatorKind::kConvex;
  if (name == "factored0") return EstimatorKind::kFactored0;
  if (name == "factored_lambda" || name == "factoredl") return EstimatorKind::kFactoredLambda;
  if (name == "debiased") return EstimatorKind::kDebiased;
  if (name == "soft_oracle") return EstimatorKind::kSoftOracle;
  if (name == "hard_oracle") return EstimatorKind::kHardOracle;
  throw ConfigError("unknown estimator: " + name);
}

struct ExperimentConfig {
  int d = 50;
  int r = 2;
  std::vector<int> n_list = {1000, 2000, 3000};
  std::vector<double> sigma_list = {0.5};
  double lambda_coeff = 0.5;  // lambda = lambda_coeff * sigma * sqrt(d)
  int replicates = 5;
  std::uint64_t seed = 492025;
  SolverConfig convex;
  SolverConfig factored;
  std::set<EstimatorKind> estimators = {EstimatorKind::kConvex, EstimatorKind::kFactored0};
  int mc = 200;  // fixed-point Monte-Carlo budget when this config drives `fixedpoint`
  std::string output = "comparison";
  int num_probes = 50;
  int rip_rank = 0;  // 0 -> 2r
  double c_corr = 4.0;
  double rip_delta_max = 0.5;
  std::size_t memory_cap_bytes = std::size_t(1) << 30;

  static ExperimentConfig from_file(const KeyValueFile& kv) {
    ExperimentConfig cfg;
    cfg.d = static_cast<int>(kv.get_int("d", cfg.d));
    cfg.r = static_cast<int>(kv.get_int("r", cfg.r));
    cfg.n_list.clear();
    for (long long n : kv.get_int_list("n_list", {1000, 2000, 3000}))
      cfg.n_list.push_back(static_cast<int>(n));
    cfg.sigma_list = kv.get_double_list("sigma_list", cfg.sigma_list);
    cfg.lambda_coeff = kv.get_double("lambda_coeff", cfg.lambda_coeff);
    cfg.replicates = static_cast<int>(kv.get_int("replicates", cfg.replicates));
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(cfg.seed)));
    cfg.convex.step = kv.get_double("convex_step", 0.01);
    cfg.convex.tol = kv.get_double("convex_tol", 0.01);
    cfg.convex.max_iter = kv.get_int("convex_max_iter", 200000);
    cfg.convex.init = parse_init(kv.get_string("convex_init", "zero"));
    cfg.factored.step = kv.get_double("factored_step", 2e-4);
    cfg.factored.tol = kv.get_double("factored_tol", 0.01);
    cfg.factored.max_iter = kv.get_int("factored_max_iter", 1000000);
    cfg.factored.init = parse_init(kv.get_string("factored_init", "ground_truth"));
    cfg.estimators.clear();
    for (const auto& name : kv.get_string_list("estimators", {"convex", "factored0"}))
      cfg.estimators.insert(parse_estimator(name));
    cfg.mc = static_cast<int>(kv.get_int("mc", cfg.mc));
    cfg.output = kv.get_string("output", cfg.output);
    cfg.num_probes = static_cast<int>(kv.get_int("num_probes", cfg.num_probes));
    cfg.rip_rank = static_cast<int>(kv.get_int("rip_rank", cfg.rip_rank));
    cfg.c_corr = kv.get_double("c_corr", cfg.c_corr);
    cfg.rip_delta_max = kv.get_double("rip_delta_max", cfg.rip_delta_max);
    cfg.memory_cap_bytes =
        static_cast<std::size_t>(kv.get_int("memory_cap_mb", 1024)) * (1 << 20);
    cfg.validate();
    return cfg;
  }

  static SolverInit parse_init(const std::string& name) {
    if (name == "zero") return SolverInit::kZero;
    if (name == "spectral") return SolverInit::kSpectral;
    if (name == "ground_truth") return SolverInit::kGroundTruth;
    throw ConfigError("unknown solver init: " + name);
  }

  void validate() const {
    if (replicates < 1) throw ConfigError("config: replicates must be >= 1");
    if (n_list.empty()) throw ConfigError("config: n_list must be nonempty");
    if (sigma_list.empty()) throw ConfigError("config: sigma_list must be nonempty");
    if (estimators.empty()) throw ConfigError("config: estimators must be nonempty");
    convex.validate();
    factored.validate();
  }
};

struct ResultRow {
  int d = 0, r = 0, n = 0;
  double sigma = 0.0, lambda = 0.0;
  int replicate = 0;
  // one optional (scaled error, raw ||.||_F^2, converged) triple per estimator
  std::optional<double> err_convex, raw_convex;
  std::optional<bool> convex_converged;
  std::optional<double> err_factored0, raw_factored0;
  std::optional<bool> factored0_converged;
  std::optional<double> err_factored_lambda, raw_factored_lambda;
  std::optional<bool> factored_lambda_converged;
  std::optional<double> err_debiased, raw_debiased;
  std::optional<double> err_soft_oracle, raw_soft_oracle;
  std::optional<double> err_hard_oracle, raw_hard_oracle;
  double theory_soft = 0.0;
  double theory_hard = 0.0;
  bool good_noise = false, good_rip = false, good_corr = false;
  double wall_time_s = 0.0;
};

inline const std::vector<std::string>& result_row_header() {
  static const std::vector<std::string> header = {
      "d", "r", "n", "sigma", "lambda", "replicate",
      "err_convex", "raw_convex", "convex_converged",
      "err_factored0", "raw_factored0", "factored0_converged",
      "err_factored_lambda", "raw_factored_lambda", "factored_lambda_converged",
      "err_debiased", "raw_debiased",
      "err_soft_oracle", "raw_soft_oracle",
      "err_hard_oracle", "raw_hard_oracle",
      "theory_soft", "theory_hard",
      "good_noise", "good_rip", "good_corr", "wall_time_s"};
  return header;
}

namespace detail {

inline std::string opt_field(const std::optional<double>& v) {
  return v ? csv_format(*v) : std::string();
}
inline std::string opt_field(const std::optional<bool>& v) {
  return v ? std::string(*v ? "1" : "0") : std::string();
}

}  // namespace detail

inline std::vector<std::string> result_row_fields(const ResultRow& row) {
  using detail::opt_field;
  return {std::to_string(row.d), std::to_string(row.r), std::to_string(row.n),
          csv_format(row.sigma), csv_format(row.lambda), std::to_string(row.replicate),
          opt_field(row.err_convex), opt_field(row.raw_convex), opt_field(row.convex_converged),
          opt_field(row.err_factored0), opt_field(row.raw_factored0),
          opt_field(row.factored0_converged),
          opt_field(row.err_factored_lambda), opt_field(row.raw_factored_lambda),
          opt_field(row.factored_lambda_converged),
          opt_field(row.err_debiased), opt_field(row.raw_debiased),
          opt_field(row.err_soft_oracle), opt_field(row.raw_soft_oracle),
          opt_field(row.err_hard_oracle), opt_field(row.raw_hard_oracle),
          csv_format(row.theory_soft), csv_format(row.theory_hard),
          row.good_noise ? "1" : "0", row.good_rip ? "1" : "0", row.good_corr ? "1" : "0",
          csv_format(row.wall_time_s)};
}

/// Runs one replicate: fresh instance and measurements, the selected
/// estimators, error and theory columns.
inline ResultRow run_replicate(const ExperimentConfig& cfg, int n, double sigma, int replicate,
                               std::uint64_t inst_seed, std::uint64_t meas_seed,
                               std::uint64_t oracle_seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRow row;
  row.d = cfg.d;
  row.r = cfg.r;
  row.n = n;
  row.sigma = sigma;
  row.replicate = replicate;
  const double lambda = cfg.lambda_coeff * sigma * std::sqrt(static_cast<double>(cfg.d));
  row.lambda = lambda;

  const ProblemInstance inst = generate_instance(cfg.d, cfg.r, sigma, inst_seed);
  MeasurementOptions mopts;
  mopts.memory_cap_bytes = cfg.memory_cap_bytes;
  const MeasurementSet ms = generate_measurements(inst, n, meas_seed, mopts);

  const double sqrt_d = std::sqrt(static_cast<double>(cfg.d));
  const Vector eigvals_normalized = inst.eigvals / sqrt_d;
  row.theory_hard = theory_mse_hard(eigvals_normalized, sigma);
  try {
    row.theory_soft = theory_mse_soft(eigvals_normalized, sigma, lambda / sqrt_d);
  } catch (const std::domain_error&) {
    // threshold at or above the smallest normalized eigenvalue: the soft
    // prediction has no finite value there
    row.theory_soft = std::numeric_limits<double>::quiet_NaN();
  }

  const GoodEventReport good = check_good_event(ms, inst, cfg.num_probes, cfg.rip_rank,
                                                cfg.c_corr, cfg.rip_delta_max);
  row.good_noise = good.noise_passed;
  row.good_rip = good.rip_passed;
  row.good_corr = good.corr_passed;

  const auto scaled_error = [&](const SymMatrix& est) {
    return (est - inst.M).mat().squaredNorm() / (2.0 * cfg.d);
  };
  const auto raw_error = [&](const SymMatrix& est) {
    return (est - inst.M).mat().squaredNorm();
  };
  const auto want = [&](EstimatorKind k) { return cfg.estimators.count(k) > 0; };

  std::optional<ConvexSolution> convex_sol;
  if (want(EstimatorKind::kConvex) || want(EstimatorKind::kDebiased)) {
    convex_sol = solve_convex(ms, lambda, cfg.convex, &inst.M);
    if (want(EstimatorKind::kConvex)) {
      row.err_convex = scaled_error(convex_sol->Z);
      row.raw_convex = raw_error(convex_sol->Z);
      row.convex_converged = convex_sol->converged;
    }
  }
  if (want(EstimatorKind::kFactored0)) {
    const FactoredSolution sol = solve_factored(ms, cfg.r, 0.0, cfg.factored, &inst.Ustar);
    const SymMatrix est = SymMatrix::from_upper(sol.U * sol.U.transpose());
    row.err_factored0 = scaled_error(est);
    row.raw_factored0 = raw_error(est);
    row.factored0_converged = sol.converged;
  }
  if (want(EstimatorKind::kFactoredLambda)) {
    const FactoredSolution sol = solve_factored(ms, cfg.r, lambda, cfg.factored, &inst.Ustar);
    const SymMatrix est = SymMatrix::from_upper(sol.U * sol.U.transpose());
    row.err_factored_lambda = scaled_error(est);
    row.raw_factored_lambda = raw_error(est);
    row.factored_lambda_converged = sol.converged;
  }
  if (want(EstimatorKind::kDebiased)) {
    const DenoiseResult deb = debias_convex(ms, convex_sol->Z, cfg.r);
    row.err_debiased = scaled_error(deb.Z);
    row.raw_debiased = raw_error(deb.Z);
  }
  if (want(EstimatorKind::kSoftOracle) || want(EstimatorKind::kHardOracle)) {
    RngStream hrng(oracle_seed, 0x0eac1e);
    const SymMatrix h = sample_goe(cfg.d, hrng);
    SymMatrix noisy = inst.M;
    noisy += sigma * h;
    if (want(EstimatorKind::kSoftOracle)) {
      const SymMatrix est = soft_threshold_psd(noisy, lambda).Z;
      row.err_soft_oracle = scaled_error(est);
      row.raw_soft_oracle = raw_error(est);
    }
    if (want(EstimatorKind::kHardOracle)) {
      const SymMatrix est = hard_threshold_rank(noisy, cfg.r).Z;
      row.err_hard_oracle = scaled_error(est);
      row.raw_hard_oracle = raw_error(est);
    }
  }
  row.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

struct ComparisonResult {
  std::vector<ResultRow> rows;
  std::string rows_path;
  std::string aggregate_path;
};

/// Runs the full grid (n_list x sigma_list x replicates), writes the row CSV,
/// a per-cell aggregate CSV, and plot-ready two-column series files with an
/// index. Rows are written in config order regardless of worker scheduling.
inline ComparisonResult run_comparison(const ExperimentConfig& cfg) {
  cfg.validate();
  struct Job {
    int n;
    double sigma;
    int replicate;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (double sigma : cfg.sigma_list)
    for (int n : cfg.n_list)
      for (int rep = 0; rep < cfg.replicates; ++rep)
        jobs.push_back({n, sigma, rep, jobs.size()});

  std::vector<ResultRow> rows(jobs.size());
  parallel_for_indexed(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const std::uint64_t base = static_cast<std::uint64_t>(job.index);
    rows[i] = run_replicate(cfg, job.n, job.sigma, job.replicate,
                            detail::mix64(cfg.seed, 3 * base),
                            detail::mix64(cfg.seed, 3 * base + 1),
                            detail::mix64(cfg.seed, 3 * base + 2));
  });

  ComparisonResult result;
  result.rows = rows;
  result.rows_path = cfg.output + ".csv";
  result.aggregate_path = cfg.output + "_agg.csv";

  CsvWriter csv(result.rows_path);
  csv.row(result_row_header());
  for (const auto& row : rows) csv.row(result_row_fields(row));

  // Per-cell aggregates: mean and sample sd over replicates per estimator.
  struct Acc {
    std::vector<double> values;
  };
  const std::vector<std::pair<std::string, std::function<std::optional<double>(const ResultRow&)>>>
      extractors = {
          {"convex", [](const ResultRow& r) { return r.err_convex; }},
          {"factored0", [](const ResultRow& r) { return r.err_factored0; }},
          {"factored_lambda", [](const ResultRow& r) { return r.err_factored_lambda; }},
          {"debiased", [](const ResultRow& r) { return r.err_debiased; }},
          {"soft_oracle", [](const ResultRow& r) { return r.err_soft_oracle; }},
          {"hard_oracle", [](const ResultRow& r) { return r.err_hard_oracle; }},
      };

  CsvWriter agg(result.aggregate_path);
  agg.row({"d", "r", "n", "sigma", "lambda", "estimator", "replicates", "mean_err", "sd_err",
           "mean_theory_soft", "mean_theory_hard"});
  std::vector<std::string> series_index;
  for (double sigma : cfg.sigma_list) {
    std::map<std::string, std::vector<std::pair<int, double>>> series;
    for (int n : cfg.n_list) {
      double theory_soft_sum = 0.0, theory_hard_sum = 0.0;
      int count = 0;
      std::map<std::string, Acc> accs;
      for (const auto& row : rows) {
        if (row.n != n || row.sigma != sigma) continue;
        ++count;
        theory_soft_sum += row.theory_soft;
        theory_hard_sum += row.theory_hard;
        for (const auto& [name, get] : extractors)
          if (auto v = get(row)) accs[name].values.push_back(*v);
      }
      for (const auto& [name, get] : extractors) {
        auto it = accs.find(name);
        if (it == accs.end() || it->second.values.empty()) continue;
        const auto& vals = it->second.values;
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double sd = 0.0;
        if (vals.size() > 1) {
          for (double v : vals) sd += (v - mean) * (v - mean);
          sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
        }
        const double lambda = cfg.lambda_coeff * sigma * std::sqrt(static_cast<double>(cfg.d));
        agg.row({std::to_string(cfg.d), std::to_string(cfg.r), std::to_string(n),
                 csv_format(sigma), csv_format(lambda), name,
                 std::to_string(vals.size()), csv_format(mean), csv_format(sd),
                 csv_format(theory_soft_sum / count), csv_format(theory_hard_sum / count)});
        series[name].push_back({n, mean});
      }
    }
    for (const auto& [name, points] : series) {
      char sig_buf[32];
      std::snprintf(sig_buf, sizeof(sig_buf), "%g", sigma);
      const std::string path =
          cfg.output + "_series_" + name + "_d" + std::to_string(cfg.d) + "_sigma" + sig_buf + ".dat";
      std::ofstream out(path, std::ios::binary);
      for (const auto& [n, mean] : points) out << n << " " << csv_format(mean) << "\n";
      series_index.push_back(path);
    }
  }
  std::ofstream index(cfg.output + "_series_index.txt", std::ios::binary);
  for (const auto& p : series_index) index << p << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// Concentration study: deviation of a Lipschitz probe of the scaled factored
// estimator from its Monte-Carlo denoising reference.
// ---------------------------------------------------------------------------

struct ConcentrationConfig {
  std::vector<int> d_list = {30, 50, 75};
  int r = 2;
  double sigma = 0.5;
  double gamma_over_r = 8.0;  // n = gamma_over_r * d * r^2 unless n_list given
  std::vector<int> n_list;    // optional override, parallel to d_list
  int reps = 20;
  int mc_h = 200;
  std::uint64_t seed = 492025;
  LipschitzProbe probe;
  double factored_step = 0.0;  // 0 -> 0.1 / lambda_1(M)
  double factored_tol = 0.01;
  long factored_max_iter = 1000000;
  std::string output = "concentration";

  static ConcentrationConfig from_file(const KeyValueFile& kv) {
    ConcentrationConfig cfg;
    cfg.d_list.clear();
    for (long long d : kv.get_int_list("d_list", {30, 50, 75}))
      cfg.d_list.push_back(static_cast<int>(d));
    cfg.r = static_cast<int>(kv.get_int("r", cfg.r));
    cfg.sigma = kv.get_double("sigma", cfg.sigma);
    cfg.gamma_over_r = kv.get_double("gamma_over_r", cfg.gamma_over_r);
    if (kv.has("n_list")) {
      cfg.n_list.clear();
      for (long long n : kv.get_int_list("n_list", {})) cfg.n_list.push_back(static_cast<int>(n));
      if (cfg.n_list.size() != cfg.d_list.size())
        throw ConfigError("config: n_list must match d_list in length");
    }
    cfg.reps = static_cast<int>(kv.get_int("reps", cfg.reps));
    cfg.mc_h = static_cast<int>(kv.get_int("mc_h", cfg.mc_h));
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(cfg.seed)));
    cfg.probe = LipschitzProbe::parse(kv.get_string("probe", "frob_dist_to_M"),
                                      static_cast<int>(kv.get_int("probe_i", 0)),
                                      static_cast<int>(kv.get_int("probe_j", 0)),
                                      kv.get_double("probe_clip", 1.0));
    cfg.factored_step = kv.get_double("factored_step", cfg.factored_step);
    cfg.factored_tol = kv.get_double("factored_tol", cfg.factored_tol);
    cfg.factored_max_iter = kv.get_int("factored_max_iter", cfg.factored_max_iter);
    cfg.output = kv.get_string("output", cfg.output);
    return cfg;
  }

  int n_for(std::size_t idx) const {
    if (!n_list.empty()) return n_list[idx];
    return static_cast<int>(std::lround(gamma_over_r * d_list[idx] * r * r));
  }
};

struct ConcentrationRow {
  int d = 0, n = 0, rep = 0;
  double phi = 0.0;
  double expected_phi = 0.0;
  double deviation = 0.0;
};

struct ConcentrationSummary {
  int d = 0, n = 0;
  double median_dev = 0.0, q25 = 0.0, q75 = 0.0, mean_dev = 0.0;
};

struct ConcentrationResult {
  std::vector<ConcentrationRow> rows;
  std::vector<ConcentrationSummary> summaries;
  std::string rows_path;
  std::string summary_path;
};

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline ConcentrationResult run_concentration(const ConcentrationConfig& cfg) {
  if (cfg.reps < 1 || cfg.mc_h < 1) throw ConfigError("concentration: reps and mc_h must be >= 1");
  ConcentrationResult result;
  for (std::size_t di = 0; di < cfg.d_list.size(); ++di) {
    const int d = cfg.d_list[di];
    const int n = cfg.n_for(di);
    const double sqrt_dr = std::sqrt(static_cast<double>(d) * cfg.r);
    const std::uint64_t dim_seed = detail::mix64(cfg.seed, 0xd000 + di);
    const ProblemInstance inst = generate_instance(d, cfg.r, cfg.sigma, dim_seed);
    const SymMatrix scaled_m = (1.0 / sqrt_dr) * inst.M;

    // Monte-Carlo reference: E_H probe(rank-r truncation of (M + sigma H)/sqrt(dr)).
    Vector phis(cfg.mc_h);
    parallel_for_indexed(static_cast<std::size_t>(cfg.mc_h), [&](std::size_t j) {
      RngStream hrng = RngStream(dim_seed, 0x77).substream(j);
      const SymMatrix h = sample_goe(d, hrng);
      SymMatrix noisy = inst.M;
      noisy += cfg.sigma * h;
      const SymMatrix ht = hard_threshold_rank(noisy, cfg.r).Z;
      phis(static_cast<Eigen::Index>(j)) = cfg.probe((1.0 / sqrt_dr) * ht, scaled_m);
    });
    const double expected_phi = phis.mean();

    SolverConfig factored;
    factored.step = cfg.factored_step > 0.0 ? cfg.factored_step : 0.1 / inst.eigvals(0);
    factored.tol = cfg.factored_tol;
    factored.max_iter = cfg.factored_max_iter;
    factored.init = SolverInit::kGroundTruth;

    std::vector<ConcentrationRow> dim_rows(static_cast<std::size_t>(cfg.reps));
    parallel_for_indexed(static_cast<std::size_t>(cfg.reps), [&](std::size_t rep) {
      const MeasurementSet ms =
          generate_measurements(inst, n, detail::mix64(dim_seed, 0x3e9 + rep));
      const FactoredSolution sol = solve_factored(ms, cfg.r, 0.0, factored, &inst.Ustar);
      const SymMatrix est = SymMatrix::from_upper(sol.U * sol.U.transpose());
      ConcentrationRow row;
      row.d = d;
      row.n = n;
      row.rep = static_cast<int>(rep);
      row.phi = cfg.probe((1.0 / sqrt_dr) * est, scaled_m);
      row.expected_phi = expected_phi;
      row.deviation = std::abs(row.phi - expected_phi);
      dim_rows[rep] = row;
    });

    std::vector<double> devs;
    for (const auto& row : dim_rows) {
      result.rows.push_back(row);
      devs.push_back(row.deviation);
    }
    std::sort(devs.begin(), devs.end());
    ConcentrationSummary summary;
    summary.d = d;
    summary.n = n;
    summary.median_dev = quantile_sorted(devs, 0.5);
    summary.q25 = quantile_sorted(devs, 0.25);
    summary.q75 = quantile_sorted(devs, 0.75);
    summary.mean_dev = std::accumulate(devs.begin(), devs.end(), 0.0) / devs.size();
    result.summaries.push_back(summary);
  }

  result.rows_path = cfg.output + ".csv";
  result.summary_path = cfg.output + "_summary.csv";
  CsvWriter csv(result.rows_path);
  csv.row({"d", "n", "rep", "phi", "expected_phi", "deviation"});
  for (const auto& row : result.rows)
    csv.row({std::to_string(row.d), std::to_string(row.n), std::to_string(row.rep),
             csv_format(row.phi), csv_format(row.expected_phi), csv_format(row.deviation)});
  CsvWriter summary_csv(result.summary_path);
  summary_csv.row({"d", "n", "median_dev", "q25", "q75", "mean_dev"});
  for (const auto& s : result.summaries)
    summary_csv.row({std::to_string(s.d), std::to_string(s.n), csv_format(s.median_dev),
                     csv_format(s.q25), csv_format(s.q75), csv_format(s.mean_dev)});
  return result;
}

}  // namespace matsense
