// Command-line front end: experiment grids, fixed-point reports, measurement
// diagnostics, and one-off matrix denoising on blob files.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "matsense/matsense.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;

matsense::KeyValueFile load_config(const std::string& path) {
  return matsense::KeyValueFile::parse_file(path);
}

int cmd_experiment(const std::string& config_path, bool strict) {
  const auto kv = load_config(config_path);
  const auto cfg = matsense::ExperimentConfig::from_file(kv);
  kv.reject_unknown_keys();
  const auto result = matsense::run_comparison(cfg);
  int nonconverged = 0;
  for (const auto& row : result.rows) {
    const bool bad = (row.convex_converged && !*row.convex_converged) ||
                     (row.factored0_converged && !*row.factored0_converged) ||
                     (row.factored_lambda_converged && !*row.factored_lambda_converged);
    if (bad) ++nonconverged;
  }
  std::printf("rows = %zu\n", result.rows.size());
  std::printf("rows_csv = %s\n", result.rows_path.c_str());
  std::printf("aggregate_csv = %s\n", result.aggregate_path.c_str());
  if (nonconverged > 0) {
    std::printf("nonconverged_rows = %d\n", nonconverged);
    if (strict) return kExitDivergence;
  }
  return 0;
}

int cmd_concentration(const std::string& config_path) {
  const auto kv = load_config(config_path);
  const auto cfg = matsense::ConcentrationConfig::from_file(kv);
  kv.reject_unknown_keys();
  const auto result = matsense::run_concentration(cfg);
  std::printf("rows_csv = %s\n", result.rows_path.c_str());
  std::printf("summary_csv = %s\n", result.summary_path.c_str());
  for (const auto& s : result.summaries)
    std::printf("d = %d  n = %d  median_dev = %.6g  mean_dev = %.6g\n", s.d, s.n,
                s.median_dev, s.mean_dev);
  return 0;
}

int cmd_fixedpoint(const std::string& config_path) {
  const auto kv = load_config(config_path);
  const int d = static_cast<int>(kv.get_int("d", 50));
  const int r = static_cast<int>(kv.get_int("r", 2));
  const double sigma = kv.get_double("sigma", 1.0);
  const std::uint64_t seed = static_cast<std::uint64_t>(kv.get_int("seed", 492025));
  const double lambda_coeff = kv.get_double("lambda_coeff", 0.5);
  const double n = kv.get_double("n", 2000);
  matsense::FixedPointOptions opts;
  opts.mc = static_cast<int>(kv.get_int("mc", opts.mc));
  opts.damping = kv.get_double("damping", opts.damping);
  opts.tol = kv.get_double("tol", opts.tol);
  opts.max_iter = static_cast<int>(kv.get_int("max_iter", opts.max_iter));
  kv.reject_unknown_keys();

  const auto inst = matsense::generate_instance(d, r, sigma, seed);
  const double lambda = lambda_coeff * sigma * std::sqrt(static_cast<double>(d));
  matsense::RngStream rng(seed, 0xf1);
  const auto sol = matsense::solve_fixed_point(inst, lambda, n, opts, rng);
  std::printf("tau_star = %.10g\n", sol.tau_star);
  std::printf("zeta_star = %.10g\n", sol.zeta_star);
  std::printf("beta_star = %.10g\n", sol.beta_star);
  std::printf("beta_product = %.10g\n", sol.beta_product);
  std::printf("beta_ratio = %.10g\n", sol.beta_ratio);
  std::printf("residual_tau = %.10g\n", sol.residual_tau);
  std::printf("residual_zeta = %.10g\n", sol.residual_zeta);
  std::printf("residual_tau_std_error = %.10g\n", sol.residual_tau_std_error);
  std::printf("residual_zeta_std_error = %.10g\n", sol.residual_zeta_std_error);
  std::printf("iterations = %d\n", sol.iterations);
  std::printf("mc_samples = %d\n", sol.mc_samples);
  std::printf("converged = %s\n", sol.converged ? "true" : "false");
  return sol.converged ? 0 : kExitDivergence;
}

int cmd_diagnose(const std::string& config_path) {
  const auto kv = load_config(config_path);
  const int d = static_cast<int>(kv.get_int("d", 50));
  const int r = static_cast<int>(kv.get_int("r", 2));
  const double sigma = kv.get_double("sigma", 0.5);
  const std::uint64_t seed = static_cast<std::uint64_t>(kv.get_int("seed", 492025));
  const int n = static_cast<int>(kv.get_int("n", 2000));
  const double lambda_coeff = kv.get_double("lambda_coeff", 0.5);
  const int num_probes = static_cast<int>(kv.get_int("num_probes", 100));
  const int rip_rank = static_cast<int>(kv.get_int("rip_rank", 0));
  const double c_corr = kv.get_double("c_corr", 4.0);
  const double rip_delta_max = kv.get_double("rip_delta_max", 0.5);
  matsense::MeasurementOptions mopts;
  mopts.memory_cap_bytes =
      static_cast<std::size_t>(kv.get_int("memory_cap_mb", 1024)) * (1 << 20);
  // Unnamed signal/sample/regularization constants; the assumption report is
  // informational, nothing asserts these hold.
  const double c1 = kv.get_double("c1", 0.5);
  const double c2 = kv.get_double("c2", 10.0);
  const double c3 = kv.get_double("c3", 2.0);
  const double c4 = kv.get_double("c4", 0.25);
  const double c5 = kv.get_double("c5", 2.0);
  kv.reject_unknown_keys();

  const auto inst = matsense::generate_instance(d, r, sigma, seed);
  const auto ms = matsense::generate_measurements(
      inst, n, matsense::detail::mix64(seed, 1), mopts);
  const auto rep =
      matsense::check_good_event(ms, inst, num_probes, rip_rank, c_corr, rip_delta_max);

  std::printf("d = %d\nr = %d\nsigma = %.10g\nseed = %llu\nn = %d\nmode = %s\n", d, r, sigma,
              static_cast<unsigned long long>(seed), n, ms.mode().c_str());
  std::printf("kappa = %.10g\nsnr = %.10g\nresamples = %d\n", inst.kappa, inst.snr,
              inst.resamples);
  std::printf("noise_spectral_norm = %.10g\nnoise_bound = %.10g\nnoise_passed = %s\n",
              rep.noise_spectral_norm, rep.noise_bound, rep.noise_passed ? "true" : "false");
  std::printf("rip_delta_hat = %.10g\nrip_delta_max = %.10g\nrip_rank = %d\nrip_passed = %s\n",
              rep.rip_delta_hat, rep.rip_delta_max, rep.rip_rank,
              rep.rip_passed ? "true" : "false");
  std::printf("corr_hat = %.10g\ncorr_bound = %.10g\ncorr_passed = %s\n", rep.corr_hat,
              rep.corr_bound, rep.corr_passed ? "true" : "false");
  std::printf("num_probes = %d\ngood_event_passed = %s\n", rep.num_probes,
              rep.passed() ? "true" : "false");

  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double sqrt_r = std::sqrt(static_cast<double>(r));
  const double lambda = lambda_coeff * sigma * sqrt_d;
  const double signal_ratio = inst.eigvals(r - 1) / sqrt_d / sigma;
  std::printf("signal_ratio = %.10g  # lambda_r(M)/(sqrt(d) sigma), vs (c1*sqrt(r), c2*sqrt(r)) = (%.6g, %.6g)\n",
              signal_ratio, c1 * sqrt_r, c2 * sqrt_r);
  std::printf("gamma_n = %.10g  # vs c3*r = %.6g\n", ms.gamma_n, c3 * r);
  std::printf("lambda_over_sigma_sqrtd = %.10g  # vs (c4, c5) = (%.6g, %.6g)\n",
              lambda / (sigma * sqrt_d), c4, c5);
  return 0;
}

int cmd_denoise(const std::string& input, double thr, int hard_rank, bool use_svd,
                const std::string& output) {
  const matsense::Matrix raw = matsense::read_matrix_blob(input);
  const matsense::SymMatrix a = matsense::SymMatrix::from_symmetric(raw, 1e-8);
  matsense::DenoiseResult res;
  if (hard_rank >= 0) {
    res = matsense::hard_threshold_rank(a, hard_rank);
    std::printf("operation = hard_threshold_rank\nrank = %d\n", hard_rank);
  } else if (use_svd) {
    res = matsense::soft_threshold_svd(a, thr);
    std::printf("operation = soft_threshold_svd\nthr = %.10g\n", thr);
  } else {
    res = matsense::soft_threshold_psd(a, thr);
    std::printf("operation = soft_threshold_psd\nthr = %.10g\n", thr);
  }
  std::printf("dim = %lld\nkept_rank = %d\n", static_cast<long long>(a.dim()), res.kept_rank);
  std::printf("input_frobenius = %.10g\noutput_frobenius = %.10g\n", a.frobenius_norm(),
              res.Z.frobenius_norm());
  if (!output.empty()) {
    matsense::write_matrix_blob(output, res.Z.mat());
    std::printf("output_blob = %s\n", output.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matsense: symmetric low-rank matrix sensing toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  bool strict = false;

  auto* experiment = app.add_subcommand("experiment", "run a replicate comparison grid");
  experiment->add_option("--config", config_path, "flat key = value config file")->required();
  experiment->add_flag("--strict", strict, "exit 3 if any solver fails to converge");

  auto* concentration =
      app.add_subcommand("concentration", "probe concentration of the factored estimator");
  concentration->add_option("--config", config_path, "flat key = value config file")->required();

  auto* fixedpoint = app.add_subcommand("fixedpoint", "solve the (tau, zeta) fixed point");
  fixedpoint->add_option("--config", config_path, "flat key = value config file")->required();

  auto* diagnose = app.add_subcommand("diagnose", "measurement / good-event diagnostics");
  diagnose->add_option("--config", config_path, "flat key = value config file")->required();

  std::string denoise_input, denoise_output;
  double denoise_thr = 0.0;
  int denoise_hard = -1;
  bool denoise_svd = false;
  auto* denoise = app.add_subcommand("denoise", "threshold a symmetric matrix blob");
  denoise->add_option("--input", denoise_input, "matrix blob path")->required();
  denoise->add_option("--thr", denoise_thr, "soft threshold level")->required();
  denoise->add_option("--hard", denoise_hard, "hard-threshold to this rank instead");
  denoise->add_flag("--svd", denoise_svd, "sign-preserving singular-value variant");
  denoise->add_option("--output", denoise_output, "write the result blob here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (experiment->parsed()) return cmd_experiment(config_path, strict);
    if (concentration->parsed()) return cmd_concentration(config_path);
    if (fixedpoint->parsed()) return cmd_fixedpoint(config_path);
    if (diagnose->parsed()) return cmd_diagnose(config_path);
    if (denoise->parsed())
      return cmd_denoise(denoise_input, denoise_thr, denoise_hard, denoise_svd, denoise_output);
  } catch (const matsense::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
