#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "gibbsnet/analysis.hpp"
#include "gibbsnet/errors.hpp"
#include "gibbsnet/experiments.hpp"

using namespace gibbsnet;

namespace {

std::vector<double> ar1(double rho, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  double v = rng.normal();
  const double s = std::sqrt(1.0 - rho * rho);
  for (auto& xi : x) {
    xi = v;
    v = rho * v + s * rng.normal();
  }
  return x;
}

Matrix gaussian_snapshots(const Vector& sd, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, sd.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < sd.size(); ++j) m(i, j) = sd[j] * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("kinetic energy and virial examples") {
  CHECK(kinetic_energy(Vector::Zero(4)) == 0.0);
  Vector p(2);
  p << 3.0, 4.0;
  CHECK(kinetic_energy(p) == 12.5);
  CHECK(virial(Vector::Zero(3), Vector::Ones(3)) == 0.0);
  // Harmonic L = a theta^2: virial = theta * 2 a theta.
  CHECK(virial(Vector::Constant(1, 1.5), Vector::Constant(1, 2 * 4.0 * 1.5)) == doctest::Approx(2 * 4.0 * 2.25));
}

TEST_CASE("Gaussian momenta have mean kinetic energy N / (2 beta)") {
  Rng rng(5);
  const double beta = 10.0;
  Vector p(3);
  double sum = 0.0;
  const int n = 1000000;
  for (int k = 0; k < n; ++k) {
    rng.fill_normal(p);
    sum += kinetic_energy(p / std::sqrt(beta));
  }
  CHECK(std::abs(sum / n - 0.15) < 0.001);
}

TEST_CASE("running averages") {
  const auto c = running_average(std::vector<double>(10, 2.5));
  for (double v : c) CHECK(v == 2.5);
  std::vector<double> alt(1001);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = double(i % 2);
  const auto a = running_average(alt);
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.5);
  CHECK(std::abs(a.back() - 0.5) < 1e-3);
  Rng rng(2);
  std::vector<double> g(1000000);
  for (auto& v : g) v = rng.normal();
  CHECK(std::abs(running_average(g).back()) < 4.0 / std::sqrt(1e6));
  CHECK_THROWS_AS(running_average({}), AnalysisError);
}

TEST_CASE("trajectory enforces thinning order and nonnegative kinetic energy") {
  Trajectory t(5, 2, true);
  const Vector th = Vector::Zero(2);
  t.append({0, 1.0, 0.5, 0.2}, &th);
  t.append({5, 1.0, 0.5, 0.2}, &th);
  CHECK_THROWS_AS(t.append({9, 1.0, 0.5, 0.2}, &th), AnalysisError);
  CHECK_THROWS_AS(t.append({10, 1.0, -0.5, 0.2}, &th), AnalysisError);
  CHECK_THROWS_AS(t.append({10, 1.0, 0.5, 0.2}), AnalysisError);
  CHECK(t.size() == 2);
  CHECK(t.walker_id() == 2);
  Vector dir(2);
  dir << 1.0, 0.0;
  CHECK(t.projection(dir, Vector::Constant(2, -1.0)) == std::vector<double>{1.0, 1.0});
}

TEST_CASE("IAT of white noise is 1") {
  Rng rng(1);
  std::vector<double> x(100000);
  for (auto& v : x) v = rng.normal();
  const IatResult r = integrated_autocorrelation_time(x);
  CHECK(std::abs(r.tau - 1.0) < 0.1);
  CHECK(std::abs(r.mean) < 4.0 * r.sigma);
}

TEST_CASE("IAT of AR(1) with rho = 0.9 is 19") {
  const IatResult r = integrated_autocorrelation_time(ar1(0.9, 1000000, 3));
  CHECK(std::abs(r.tau - 19.0) < 2.0);
}

TEST_CASE("IAT scales with the sampling interval and survives pre-reduction") {
  const auto x = ar1(0.5, 200000, 4);
  IatOptions o;
  const double base = integrated_autocorrelation_time(x, o).tau;
  o.sampling_interval = 100.0;
  CHECK(integrated_autocorrelation_time(x, o).tau == doctest::Approx(100.0 * base));
  IatOptions pre;
  pre.min_reductions = 3;
  const IatResult r = integrated_autocorrelation_time(x, pre);
  CHECK(r.reductions >= 3);
  CHECK(std::abs(r.tau - 3.0) < 0.4);
}

TEST_CASE("IAT rejects degenerate series") {
  CHECK_THROWS_AS(integrated_autocorrelation_time(std::vector<double>(1000, 1.0)), AnalysisError);
  CHECK_THROWS_AS(integrated_autocorrelation_time(std::vector<double>(10, 0.0)), AnalysisError);
  // A random walk has no finite IAT.
  Rng rng(9);
  std::vector<double> walk(2000);
  double v = 0.0;
  for (auto& w : walk) w = v += rng.normal();
  CHECK_THROWS_AS(integrated_autocorrelation_time(walk), AnalysisError);
}

TEST_CASE("sample covariance spectrum recovers diag(4, 1)") {
  Vector sd(2);
  sd << 2.0, 1.0;
  const SpectrumResult s = snapshot_spectrum(gaussian_snapshots(sd, 100000, 6));
  CHECK(std::abs(s.eigenvalues[0] / 4.0 - 1.0) < 0.05);
  CHECK(std::abs(s.eigenvalues[1] - 1.0) < 0.05);
  CHECK(std::abs(std::abs(s.eigenvectors(0, 0)) - 1.0) < 0.01);
}

TEST_CASE("identical snapshots have a zero spectrum") {
  const Matrix snaps = Matrix::Constant(10, 3, 0.7);
  const SpectrumResult s = snapshot_spectrum(snaps);
  CHECK(s.eigenvalues.cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(snapshot_spectrum(Matrix::Zero(1, 3)), AnalysisError);
}

TEST_CASE("eigenpairs satisfy the residual bound and are orthonormal and sorted") {
  Rng rng(10);
  Vector sd(30);
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = std::exp(-0.2 * double(j));
  Matrix snaps = gaussian_snapshots(sd, 500, 11);
  Matrix rot = Matrix::Random(30, 30);
  const Matrix q = Eigen::HouseholderQR<Matrix>(rot).householderQ();
  snaps = snaps * q;
  const Matrix c = sample_covariance(snaps);
  const SpectrumResult s = snapshot_spectrum(snaps);
  const double cn = c.norm();
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j) {
    CHECK((c * s.eigenvectors.col(j) - s.eigenvalues[j] * s.eigenvectors.col(j)).norm() < 1e-8 * cn);
    CHECK(s.eigenvalues[j] >= -1e-10);
    if (j) CHECK(s.eigenvalues[j] <= s.eigenvalues[j - 1]);
  }
  const Matrix vtv = s.eigenvectors.transpose() * s.eigenvectors;
  CHECK((vtv - Matrix::Identity(30, 30)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("dense and iterative eigen paths agree on the top five eigenvalues") {
  Vector sd(120);
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = 3.0 / (1.0 + 0.3 * double(j));
  const Matrix snaps = gaussian_snapshots(sd, 400, 12);
  const SpectrumResult dense = snapshot_spectrum(snaps, 5);
  const SpectrumResult iter = snapshot_spectrum(snaps, 5, /*dense_limit=*/10);
  REQUIRE(dense.eigenvalues.size() == 5);
  REQUIRE(iter.eigenvalues.size() == 5);
  for (int j = 0; j < 5; ++j) {
    CHECK(std::abs(iter.eigenvalues[j] / dense.eigenvalues[j] - 1.0) < 1e-6);
    CHECK(std::abs(std::abs(iter.eigenvectors.col(j).dot(dense.eigenvectors.col(j))) - 1.0) < 1e-5);
  }
}

TEST_CASE("trajectory covariance: pooled and per-walker modes") {
  Trajectory a(1, 0, true), b(1, 1, true);
  Rng rng(13);
  for (std::uint64_t k = 0; k < 2000; ++k) {
    Vector x(2), y(2);
    x << 3.0 * rng.normal(), rng.normal();
    y << rng.normal(), 3.0 * rng.normal();
    a.append({k, 0, 0, 0}, &x);
    b.append({k, 0, 0, 0}, &y);
  }
  const auto per = trajectory_covariance({&a, &b}, CovarianceMode::per_walker);
  REQUIRE(per.size() == 2);
  CHECK(std::abs(std::abs(per[0].eigenvectors(0, 0)) - 1.0) < 0.01);
  CHECK(std::abs(std::abs(per[1].eigenvectors(1, 0)) - 1.0) < 0.01);
  const auto pooled = trajectory_covariance({&a, &b}, CovarianceMode::pooled);
  REQUIRE(pooled.size() == 1);
  CHECK(std::abs(pooled[0].eigenvalues[0] / pooled[0].eigenvalues[1] - 1.0) < 0.1);
  Trajectory none(1, 0, false);
  none.append({0, 0, 0, 0});
  CHECK_THROWS_AS(trajectory_covariance({&none}, CovarianceMode::pooled), AnalysisError);
}

TEST_CASE("landscape grid on the harmonic model is a theta^2") {
  const double a = 4.0;
  QuadraticSource src(Matrix::Constant(1, 1, a));
  const LandscapeGrid g = landscape_grid(src, Vector::Zero(1), Vector::Ones(1), Vector::Ones(1), 10.0, 10.0, 41);
  REQUIRE(g.c0.size() == 41);
  for (int i = 0; i < 41; ++i) CHECK(g.c0[i] == doctest::Approx(-10.0 + 0.5 * i).epsilon(1e-15));
  for (int i = 0; i < 41; ++i)
    for (int j = 0; j < 41; ++j) {
      const double t = g.c0[i] + g.c1[j];
      CHECK(g.loss(i, j) == doctest::Approx(a * t * t).epsilon(1e-12));
    }
  CHECK(g.reference == 0.0);
  CHECK(g.log_shifted.minCoeff() == doctest::Approx(std::log(1e-16)));
}

TEST_CASE("landscape directions are normalized and zero directions rejected") {
  QuadraticSource src(Matrix::Identity(2, 2));
  Vector v0(2), v1(2);
  v0 << 2.0, 0.0;
  v1 << 0.0, 1.0;
  const LandscapeGrid g = landscape_grid(src, Vector::Zero(2), v0, v1, 1.0, 2.0, 3, {-5.0});
  CHECK(g.loss(2, 1) == doctest::Approx(1.0));
  CHECK(g.loss(1, 2) == doctest::Approx(4.0));
  CHECK(g.reference == -5.0);
  CHECK_THROWS_AS(landscape_grid(src, Vector::Zero(2), Vector::Zero(2), Vector::Zero(2), 1.0, 1.0, 3),
                  ConfigError);
}

TEST_CASE("trajectory projection coordinates") {
  QuadraticSource src(Matrix::Identity(3, 3));
  Vector c(3), v0 = Vector::Unit(3, 0), v1 = Vector::Unit(3, 1);
  c << 1.0, 2.0, 3.0;
  const auto pts = project_trajectory({c, c + 3.0 * v0}, c, v0, v1, src);
  CHECK(pts[0].c0 == 0.0);
  CHECK(pts[0].c1 == 0.0);
  CHECK(pts[0].loss == doctest::Approx(14.0));
  CHECK(pts[1].c0 == doctest::Approx(3.0));
  CHECK(pts[1].c1 == 0.0);
  CHECK(pts[1].loss == doctest::Approx(16.0 + 4.0 + 9.0));  // loss at theta, not its projection

  Rng rng(14);
  std::vector<Vector> thetas(100, Vector(3));
  for (auto& t : thetas) rng.fill_normal(t);
  Vector w0(3), w1(3);
  w0 << 1.0, 1.0, 0.0;
  w1 << 1.0, -1.0, 1.0;
  w0.normalize();
  w1.normalize();
  for (const auto& [p, t] : [&] {
         std::vector<std::pair<ProjectedPoint, Vector>> out;
         const auto proj = project_trajectory(thetas, c, w0, w1, src);
         for (std::size_t i = 0; i < proj.size(); ++i) out.emplace_back(proj[i], thetas[i]);
         return out;
       }())
    CHECK(p.c0 * p.c0 + p.c1 * p.c1 <= (t - c).squaredNorm() + 1e-12);
}

TEST_CASE("observer accumulates loss, kinetic energy and virial") {
  QuadraticSource src(Matrix::Constant(1, 1, 2.0));
  Trajectory t(1, 0, false);
  Observer obs(&t);
  WalkerState s(Vector::Constant(1, 0.5), 1);
  s.momentum[0] = 2.0;
  obs.observe(s, src);
  CHECK(obs.mean_loss() == doctest::Approx(0.5));
  CHECK(obs.mean_kinetic_energy() == doctest::Approx(2.0));
  CHECK(obs.mean_virial() == doctest::Approx(1.0));  // 0.5 * 4 * 0.5
  CHECK(t.size() == 1);
}

TEST_CASE("flat-potential kinetic energy error decays as K^(-1/2)") {
  // a = 0.01, gamma = 100: discretization bias is negligible, only the
  // sampling error is left.
  const HarmonicProblem prob = make_harmonic_problem(0.01);
  SamplerConfig cfg;
  cfg.kind = SamplerKind::BAOAB;
  cfg.step_size = 0.0625;
  cfg.friction = 100.0;
  cfg.inverse_temperature = 10.0;
  cfg.mobile_mask = prob.mask;
  std::vector<double> ks, rms;
  for (std::uint64_t k : {10000ull, 100000ull, 1000000ull}) {
    auto src = prob.objective();
    const int seeds = k == 1000000ull ? 12 : 40;
    double sum2 = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const RunAverages r = run_and_average(cfg, *src, Vector::Zero(2), k, 500 + std::uint64_t(s));
      sum2 += std::pow(r.kinetic_energy / 0.05 - 1.0, 2);
    }
    ks.push_back(double(k));
    rms.push_back(std::sqrt(sum2 / seeds));
  }
  const double slope = fit_slope(ks, rms, 1.0);
  CHECK(std::abs(slope + 0.5) < 0.1);
}

TEST_CASE("cross-entropy perceptron: the virial is not twice the kinetic energy") {
  // Demonstration only: the loss grows logarithmically, so the harmonic
  // equality has no reason to hold. The numbers are printed, not asserted.
  Architecture arch;
  arch.layer_sizes = {2, 2};
  arch.loss = LossKind::softmax_cross_entropy;
  Dataset d = make_two_clusters(50, 1);
  Matrix one_hot = Matrix::Zero(50, 2);
  for (Eigen::Index i = 0; i < 50; ++i) one_hot(i, d.labels(i, 0) > 0 ? 0 : 1) = 1.0;
  d.labels = one_hot;
  ModelObjective obj(arch, std::make_shared<Dataset>(d));
  SamplerConfig cfg;
  cfg.kind = SamplerKind::BAOAB;
  cfg.step_size = 0.05;
  cfg.friction = 10.0;
  cfg.inverse_temperature = 10.0;
  const RunAverages r = run_and_average(cfg, obj, Vector::Zero(6), 20000, 3);
  MESSAGE("cross-entropy: <virial> = " << r.virial << ", 2<KE> = " << 2 * r.kinetic_energy);
  CHECK(std::isfinite(r.virial));
}

TEST_CASE("fit_slope: exact power law") {
  const std::vector<double> eps = halving_grid(0.25, 5);
  std::vector<double> err;
  for (double e : eps) err.push_back(3.7 * e * e);
  CHECK(std::abs(fit_slope(eps, err) - 2.0) < 1e-12);
  REQUIRE(eps.size() == 5);
  CHECK(eps.back() == 0.25 / 16);
}

TEST_CASE("fit_slope: first order with a noise floor and down-weighted smallest step") {
  const std::vector<double> eps = halving_grid(0.25, 5);
  std::vector<double> err;
  for (double e : eps) err.push_back(0.5 * e + 0.004);
  // Reference weighted least squares through the normal equations.
  Eigen::MatrixXd x(5, 2);
  Eigen::VectorXd y(5), w(5);
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = std::log(eps[std::size_t(i)]);
    y[i] = std::log(err[std::size_t(i)]);
    w[i] = i == 4 ? 0.1 : 1.0;
  }
  const Eigen::VectorXd beta =
      (x.transpose() * w.asDiagonal() * x).ldlt().solve(x.transpose() * w.asDiagonal() * y);
  const double slope = fit_slope(eps, err);
  CHECK(slope == doctest::Approx(beta[1]).epsilon(1e-12));
  CHECK(std::abs(slope - 1.0) < 0.15);
}

TEST_CASE("fit_slope rejects underdetermined and nonpositive input") {
  CHECK_THROWS_AS(fit_slope({0.1}, {0.2}), AnalysisError);
  CHECK_THROWS_AS(fit_slope({0.1, 0.1, 0.1}, {0.2, 0.3, 0.4}), AnalysisError);
  CHECK_THROWS_AS(fit_slope({0.1, 0.2, 0.4}, {0.2, 0.0, 0.4}), AnalysisError);
  CHECK_THROWS_AS(fit_slope({0.1, -0.2, 0.4}, {0.2, 0.3, 0.4}), AnalysisError);
}
