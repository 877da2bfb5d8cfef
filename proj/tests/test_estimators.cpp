#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "matsense/estimators.hpp"

using namespace matsense;

namespace {

SymMatrix random_sym(int d, RngStream& rng, double scale = 1.0) {
  Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) m(i, j) = scale * rng.gaussian();
  return SymMatrix::from_upper(std::move(m));
}

Matrix random_factor(int d, int r, RngStream& rng) {
  Matrix u(d, r);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < r; ++j) u(i, j) = rng.gaussian();
  return u;
}

Matrix random_orthogonal(int d, RngStream& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_factor(d, d, rng));
  return qr.householderQ() * Matrix::Identity(d, d);
}

struct SmallProblem {
  ProblemInstance inst;
  MeasurementSet ms;
};

SmallProblem small_problem(int d, int r, int n, double sigma, std::uint64_t seed) {
  SmallProblem p{generate_instance(d, r, sigma, seed), {}};
  p.ms = generate_measurements(p.inst, n, seed + 1);
  return p;
}

}  // namespace

TEST_CASE("convex_objective: trivial values and re-summation oracle") {
  auto [inst, ms] = small_problem(9, 2, 40, 0.5, 600);

  // zero matrix
  REQUIRE(convex_objective(ms, SymMatrix::zero(9), 0.0) ==
          Catch::Approx(0.5 * ms.y.squaredNorm()).epsilon(1e-12));

  // noiseless perfect fit
  auto noiseless_inst = generate_instance(9, 2, 0.5, 600);
  noiseless_inst.sigma = 0.0;
  const auto clean = generate_measurements(noiseless_inst, 40, 601);
  REQUIRE(convex_objective(clean, noiseless_inst.M, 0.0) < 1e-18);

  // independent summation path: explicit loop over the sensing matrices
  RngStream rng(602, 0);
  const SymMatrix z = random_sym(9, rng);
  const double lambda = 0.8;
  double direct = 0.0;
  for (int i = 0; i < ms.n; ++i) {
    const double pred = frobenius_inner(ms.sensing_matrix(i), z) / std::sqrt(40.0);
    direct += 0.5 * (ms.y(i) - pred) * (ms.y(i) - pred);
  }
  direct += lambda * eigh(z).eigenvalues.cwiseAbs().sum();
  REQUIRE(convex_objective(ms, z, lambda) == Catch::Approx(direct).epsilon(1e-10));
}

TEST_CASE("convex_smooth_gradient: zero at perfect fit, -X*(y) at zero, finite differences") {
  auto inst = generate_instance(8, 2, 0.5, 610);
  inst.sigma = 0.0;
  const auto clean = generate_measurements(inst, 50, 611);
  REQUIRE(convex_smooth_gradient(clean, inst.M).frobenius_norm() < 1e-10);

  auto [inst2, ms] = small_problem(8, 2, 50, 0.5, 612);
  const SymMatrix at_zero = convex_smooth_gradient(ms, SymMatrix::zero(8));
  REQUIRE((at_zero + ms.adjoint(ms.y)).frobenius_norm() < 1e-12);

  RngStream rng(613, 0);
  const SymMatrix z = random_sym(8, rng);
  const SymMatrix v = random_sym(8, rng);
  const SymMatrix g = convex_smooth_gradient(ms, z);
  const auto smooth = [&](const SymMatrix& w) { return 0.5 * (ms.y - ms.apply(w)).squaredNorm(); };
  const double h = 1e-5;
  const double fd = (smooth(z + h * v) - smooth(z - h * v)) / (2.0 * h);
  REQUIRE(fd == Catch::Approx(frobenius_inner(g, v)).epsilon(1e-5));
}

TEST_CASE("prox_nuclear_psd matches the denoiser") {
  RngStream rng(614, 0);
  const SymMatrix a = random_sym(5, rng);
  REQUIRE((prox_nuclear_psd(a, 0.3) - soft_threshold_psd(a, 0.3).Z).frobenius_norm() == 0.0);
}

TEST_CASE("solve_convex: stationary at the noiseless ground truth") {
  auto inst = generate_instance(8, 2, 0.5, 620);
  inst.sigma = 0.0;
  const auto clean = generate_measurements(inst, 60, 621);
  SolverConfig cfg;
  cfg.step = 0.05;
  cfg.tol = 0.01;
  cfg.init = SolverInit::kGroundTruth;
  const auto sol = solve_convex(clean, 0.0, cfg, &inst.M);
  REQUIRE(sol.converged);
  REQUIRE(sol.iterations == 1);
  REQUIRE((sol.Z - inst.M).frobenius_norm() < 1e-8 * inst.M.frobenius_norm());
}

TEST_CASE("solve_convex: coarse solution matches a high-precision long run") {
  auto [inst, ms] = small_problem(8, 1, 400, 0.1, 630);
  const double lambda = 0.5 * 0.1 * std::sqrt(8.0);
  SolverConfig coarse;
  coarse.step = 0.1;
  coarse.tol = 1e-4;
  SolverConfig fine = coarse;
  fine.tol = 1e-8;
  fine.max_iter = 2000000;
  const auto a = solve_convex(ms, lambda, coarse);
  const auto b = solve_convex(ms, lambda, fine);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  REQUIRE((a.Z - b.Z).frobenius_norm() <= 1e-3);
}

TEST_CASE("solve_convex: monotone objective under the safe step at the reference config",
          "[slow]") {
  auto [inst, ms] = small_problem(50, 2, 2000, 0.5, 492025);
  const double lambda = 0.5 * inst.sigma * std::sqrt(50.0);
  const double lip = estimate_smooth_lipschitz(ms);
  SolverConfig cfg;
  cfg.step = 0.01;
  cfg.tol = 0.01;
  cfg.record_trace = true;
  REQUIRE(cfg.step <= 1.0 / lip);
  const auto sol = solve_convex(ms, lambda, cfg);
  REQUIRE(sol.converged);
  REQUIRE_FALSE(sol.objective_increased);
  for (std::size_t k = 1; k < sol.trace.size(); ++k)
    REQUIRE(sol.trace[k].objective <= sol.trace[k - 1].objective * (1.0 + 1e-12));
}

TEST_CASE("ncvx objective and gradient: global minimum and origin saddle") {
  auto inst = generate_instance(8, 2, 0.5, 640);
  inst.sigma = 0.0;
  const auto clean = generate_measurements(inst, 60, 641);
  REQUIRE(ncvx_objective(clean, inst.Ustar, 0.0) < 1e-18);
  REQUIRE(ncvx_gradient(clean, inst.Ustar, 0.0).norm() < 1e-9);

  auto [inst2, ms] = small_problem(8, 2, 60, 0.5, 642);
  const Matrix zero = Matrix::Zero(8, 2);
  REQUIRE(ncvx_gradient(ms, zero, 1.5).norm() == 0.0);
}

TEST_CASE("ncvx gradient matches central finite differences") {
  auto [inst, ms] = small_problem(6, 2, 40, 0.5, 650);
  RngStream rng(651, 0);
  const double lambda = 0.7;
  for (int trial = 0; trial < 3; ++trial) {
    const Matrix u = random_factor(6, 2, rng);
    const Matrix v = random_factor(6, 2, rng);
    const Matrix g = ncvx_gradient(ms, u, lambda);
    const double h = 1e-5;
    const double fd =
        (ncvx_objective(ms, u + h * v, lambda) - ncvx_objective(ms, u - h * v, lambda)) /
        (2.0 * h);
    REQUIRE(fd == Catch::Approx((g.array() * v.array()).sum()).epsilon(1e-5));
  }
}

TEST_CASE("ncvx objective is invariant along the orthogonal orbit") {
  auto [inst, ms] = small_problem(7, 3, 40, 0.5, 660);
  RngStream rng(661, 0);
  const Matrix u = random_factor(7, 3, rng);
  const Matrix q = random_orthogonal(3, rng);
  const double a = ncvx_objective(ms, u, 0.9);
  const double b = ncvx_objective(ms, u * q, 0.9);
  REQUIRE(a == Catch::Approx(b).epsilon(1e-10));
}

TEST_CASE("solve_factored: starts and stays at the noiseless global minimum") {
  auto inst = generate_instance(8, 2, 0.5, 670);
  inst.sigma = 0.0;
  const auto clean = generate_measurements(inst, 60, 671);
  SolverConfig cfg;
  cfg.step = 1e-3;
  cfg.tol = 0.01;
  cfg.init = SolverInit::kGroundTruth;
  const auto sol = solve_factored(clean, 2, 0.0, cfg, &inst.Ustar);
  REQUIRE(sol.converged);
  REQUIRE(sol.iterations == 0);
  REQUIRE((sol.U - inst.Ustar).norm() == 0.0);
}

TEST_CASE("solve_factored: divergence detector trips on an absurd step") {
  auto [inst, ms] = small_problem(8, 2, 60, 0.5, 680);
  SolverConfig cfg;
  cfg.step = 10.0;
  cfg.tol = 1e-6;
  cfg.init = SolverInit::kGroundTruth;
  cfg.max_iter = 2000;
  const auto sol = solve_factored(ms, 2, 0.0, cfg, &inst.Ustar);
  REQUIRE(sol.diverged);
  REQUIRE_FALSE(sol.converged);
}

TEST_CASE("solve_factored: spectral initialization recovers a low-noise instance") {
  auto [inst, ms] = small_problem(12, 2, 500, 0.05, 690);
  SolverConfig cfg;
  cfg.step = 5e-3;
  cfg.tol = 1e-3;
  cfg.init = SolverInit::kSpectral;
  cfg.max_iter = 200000;
  const auto sol = solve_factored(ms, 2, 0.0, cfg);
  REQUIRE(sol.converged);
  const SymMatrix est = SymMatrix::from_upper(sol.U * sol.U.transpose());
  REQUIRE((est - inst.M).frobenius_norm() < 0.2 * inst.M.frobenius_norm());
}

TEST_CASE("hessian quadratic form: null direction and finite differences") {
  auto [inst, ms] = small_problem(6, 2, 40, 0.5, 700);
  RngStream rng(701, 0);
  const Matrix u = random_factor(6, 2, rng);
  REQUIRE(hessian_quadratic_form(ms, u, Matrix::Zero(6, 2), 0.8) == 0.0);

  const double lambda = 0.8;
  for (int trial = 0; trial < 3; ++trial) {
    const Matrix v = random_factor(6, 2, rng);
    const double h = 1e-3;
    const double fd = (ncvx_objective(ms, u + h * v, lambda) - 2.0 * ncvx_objective(ms, u, lambda) +
                       ncvx_objective(ms, u - h * v, lambda)) /
                      (h * h);
    REQUIRE(fd == Catch::Approx(hessian_quadratic_form(ms, u, v, lambda)).epsilon(1e-4));
  }
}

TEST_CASE("hessian quadratic form: second-order necessary condition at a solver minimum") {
  auto [inst, ms] = small_problem(20, 2, 600, 0.3, 710);
  SolverConfig cfg;
  cfg.step = 2e-3;
  cfg.tol = 1e-3;
  cfg.init = SolverInit::kGroundTruth;
  const auto sol = solve_factored(ms, 2, 0.0, cfg, &inst.Ustar);
  REQUIRE(sol.converged);
  const Matrix aligned = inst.Ustar * procrustes_align(inst.Ustar, sol.U).rotation;
  const Matrix v = sol.U - aligned;
  const double quad = hessian_quadratic_form(ms, sol.U, v, 0.0);
  REQUIRE(quad >= -cfg.tol * v.squaredNorm());
}

TEST_CASE("cross-solver consistency: factored vs debiased convex on a small instance") {
  auto [inst, ms] = small_problem(8, 1, 400, 0.1, 720);
  const double lambda = 0.5 * 0.1 * std::sqrt(8.0);
  SolverConfig convex_cfg;
  convex_cfg.step = 0.1;
  convex_cfg.tol = 1e-4;
  const auto convex_sol = solve_convex(ms, lambda, convex_cfg);
  REQUIRE(convex_sol.converged);
  const SymMatrix z_deb = debias_convex(ms, convex_sol.Z, 1).Z;

  SolverConfig factored_cfg;
  factored_cfg.step = 0.02;
  factored_cfg.tol = 1e-3;
  factored_cfg.init = SolverInit::kGroundTruth;
  const auto factored_sol = solve_factored(ms, 1, 0.0, factored_cfg, &inst.Ustar);
  REQUIRE(factored_sol.converged);
  const SymMatrix est = SymMatrix::from_upper(factored_sol.U * factored_sol.U.transpose());

  const double bound = 10.0 * 0.1 * 1.0 * std::sqrt(8.0 / 400.0) * std::sqrt(8.0 * 1.0);
  REQUIRE((est - z_deb).frobenius_norm() <= bound);
}

TEST_CASE("solver trace round-trips through its CSV form") {
  auto [inst, ms] = small_problem(8, 1, 60, 0.3, 725);
  SolverConfig cfg;
  cfg.step = 0.05;
  cfg.tol = 1e-3;
  cfg.record_trace = true;
  const auto sol = solve_convex(ms, 0.4, cfg);
  REQUIRE_FALSE(sol.trace.empty());
  const auto path =
      (std::filesystem::temp_directory_path() / "matsense_trace_test.csv").string();
  write_trace_csv(path, sol.trace);
  std::ifstream in(path, std::ios::binary);
  std::string header;
  REQUIRE(std::getline(in, header));
  REQUIRE(header == "iter,objective,residual\r");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  REQUIRE(rows == sol.trace.size());
  std::remove(path.c_str());
}

TEST_CASE("regularized minima coincide when the penalty dominates the noise", "[slow]") {
  // Strong-signal, small-noise regime with the penalty level above the noise
  // operator norm: the convex minimizer is rank r and matches the factored
  // minimizer, and both debiasing maps agree.
  const int d = 30, r = 2, n = 1500;
  const double sigma = 0.1;
  auto [inst, ms] = small_problem(d, r, n, sigma, 730);
  const double lambda = 4.0 * sigma * std::sqrt(static_cast<double>(d));
  REQUIRE(spectral_norm(ms.adjoint(ms.eps)) < lambda / 2.0);

  SolverConfig convex_cfg;
  convex_cfg.step = 0.1;
  convex_cfg.tol = 1e-3;
  const auto zsol = solve_convex(ms, lambda, convex_cfg);
  REQUIRE(zsol.converged);

  SolverConfig factored_cfg;
  factored_cfg.step = 2e-3;
  factored_cfg.tol = 1e-3;
  factored_cfg.init = SolverInit::kGroundTruth;
  const auto usol = solve_factored(ms, r, lambda, factored_cfg, &inst.Ustar);
  REQUIRE(usol.converged);

  const SymMatrix uut = SymMatrix::from_upper(usol.U * usol.U.transpose());
  const double rel = (uut - zsol.Z).frobenius_norm() / inst.M.frobenius_norm();
  REQUIRE(rel <= 5.0 * (convex_cfg.tol + factored_cfg.tol));

  const Spectrum zspec = eigh(zsol.Z);
  int above = 0;
  for (int i = 0; i < d; ++i)
    if (zspec.eigenvalues(i) > 10.0 * convex_cfg.tol) ++above;
  REQUIRE(above <= r);

  // The two debiasing maps agree, and the retained eigenvalues shift by
  // exactly the penalty level up to solver error.
  const SymMatrix z_deb = debias_convex(ms, zsol.Z, r).Z;
  const Matrix u_deb = debias_factored(usol.U, lambda);
  const SymMatrix u_deb_outer = SymMatrix::from_upper(u_deb * u_deb.transpose());
  REQUIRE((z_deb - u_deb_outer).frobenius_norm() / inst.M.frobenius_norm() <=
          10.0 * convex_cfg.tol);
  const Spectrum dspec = eigh(z_deb);
  for (int i = 0; i < r; ++i)
    REQUIRE(dspec.eigenvalues(i) ==
            Catch::Approx(zspec.eigenvalues(i) + lambda).margin(10.0 * convex_cfg.tol));
}
