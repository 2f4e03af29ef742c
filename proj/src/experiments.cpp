#include "gibbsnet/experiments.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

double fit_slope(const std::vector<double>& eps, const std::vector<double>& err,
                 double small_eps_weight) {
  if (eps.size() != err.size()) throw AnalysisError("slope fit: eps and error lengths differ");
  if (eps.size() < 3) throw AnalysisError("slope fit needs at least 3 points");
  for (std::size_t i = 0; i < eps.size(); ++i)
    if (!(eps[i] > 0.0) || !(err[i] > 0.0) || !std::isfinite(eps[i]) || !std::isfinite(err[i]))
      throw AnalysisError("slope fit needs positive finite step sizes and errors");
  const std::size_t smallest =
      static_cast<std::size_t>(std::min_element(eps.begin(), eps.end()) - eps.begin());
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double w = i == smallest ? small_eps_weight : 1.0;
    sw += w;
    sx += w * std::log(eps[i]);
    sy += w * std::log(err[i]);
  }
  const double mx = sx / sw, my = sy / sw;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double w = i == smallest ? small_eps_weight : 1.0;
    const double dx = std::log(eps[i]) - mx;
    sxy += w * dx * (std::log(err[i]) - my);
    sxx += w * dx * dx;
  }
  if (!(sxx > 0.0)) throw AnalysisError("slope fit needs at least two distinct step sizes");
  return sxy / sxx;
}

RunAverages run_and_average(const SamplerConfig& cfg, GradientSource& src, const Vector& theta0,
                            std::uint64_t steps, std::uint64_t seed, std::uint64_t stream,
                            Trajectory* traj) {
  const Sampler sampler(cfg, src.dim());
  WalkerState s(theta0, seed, stream);
  Observer obs(traj);
  const std::uint64_t evals0 = src.evaluations();
  for (std::uint64_t k = 0; k < steps; ++k) {
    sampler.step(s, src);
    obs.observe(s, src);
  }
  RunAverages r;
  r.kinetic_energy = obs.mean_kinetic_energy();
  r.virial = obs.mean_virial();
  r.loss = obs.mean_loss();
  r.steps = steps;
  r.gradient_evaluations = src.evaluations() - evals0;
  if (s.hmc_proposals) r.acceptance_rate = double(s.hmc_accepted) / double(s.hmc_proposals);
  if (steps) {
    r.mean_theta = obs.sum_theta() / double(steps);
    r.mean_theta_sq = obs.sum_theta_sq() / double(steps);
  }
  return r;
}

// ---- harmonic ----

std::unique_ptr<ModelObjective> HarmonicProblem::objective() const {
  return std::make_unique<ModelObjective>(arch, data);
}

HarmonicProblem make_harmonic_problem(double a) {
  HarmonicProblem p;
  p.arch.layer_sizes = {1, 1};
  p.data = std::make_shared<Dataset>(make_harmonic(a));
  p.mask = Vector::Zero(2);
  p.mask[0] = 1.0;
  p.a = a;
  return p;
}

Observable parse_observable(const std::string& name) {
  if (name == "kinetic_energy") return Observable::kinetic_energy;
  if (name == "virial") return Observable::virial;
  throw ConfigError("unknown observable '" + name + "'");
}

std::string to_string(Observable o) {
  return o == Observable::kinetic_energy ? "kinetic_energy" : "virial";
}

std::vector<double> SweepResult::mean_relative_error() const {
  std::vector<double> out;
  for (const auto& v : values) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    out.push_back(std::abs(m - exact) / std::abs(exact));
  }
  return out;
}

std::vector<double> SweepResult::rms_relative_error() const {
  std::vector<double> out;
  for (const auto& v : values) {
    double s = 0.0;
    for (double x : v) s += (x - exact) * (x - exact);
    out.push_back(std::sqrt(s / double(v.size())) / std::abs(exact));
  }
  return out;
}

std::vector<double> halving_grid(double eps_max, int count) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(std::ldexp(eps_max, -k));
  return out;
}

namespace {

SweepResult sweep(GradientSource& src, const Vector& theta0, const Vector& mask, double exact,
                  const SweepSpec& spec) {
  SweepResult res;
  res.eps = spec.eps;
  res.exact = exact;
  for (std::size_t i = 0; i < spec.eps.size(); ++i) {
    SamplerConfig cfg;
    cfg.kind = spec.kind;
    cfg.step_size = spec.eps[i];
    cfg.friction = spec.friction;
    cfg.inverse_temperature = spec.beta;
    cfg.mobile_mask = mask;
    std::vector<double> vals;
    for (int s = 0; s < spec.seeds; ++s) {
      const std::uint64_t seed = spec.seed_base + 1000003ull * i + std::uint64_t(s);
      const RunAverages r = run_and_average(cfg, src, theta0, spec.steps, seed);
      vals.push_back(spec.observable == Observable::kinetic_energy ? r.kinetic_energy : r.virial);
    }
    res.values.push_back(std::move(vals));
  }
  return res;
}

}  // namespace

SweepResult harmonic_sweep(double a, const SweepSpec& spec) {
  const HarmonicProblem prob = make_harmonic_problem(a);
  auto src = prob.objective();
  const double exact = spec.observable == Observable::kinetic_energy ? 0.5 / spec.beta : 1.0 / spec.beta;
  return sweep(*src, Vector::Zero(2), prob.mask, exact, spec);
}

// ---- two clusters ----

std::unique_ptr<ModelObjective> TwoClusterProblem::objective() const {
  return std::make_unique<ModelObjective>(arch, data, reduction);
}

TwoClusterProblem make_two_cluster_problem(int n_points, std::uint64_t data_seed,
                                           Reduction reduction, int gd_steps, double gd_rate) {
  TwoClusterProblem p;
  p.arch.layer_sizes = {2, 1};
  p.data = std::make_shared<Dataset>(make_two_clusters(n_points, data_seed));
  p.reduction = reduction;

  Matrix xt(p.data->size(), 3);
  xt << p.data->inputs, Vector::Ones(p.data->size());
  Matrix h = 2.0 * xt.transpose() * xt;
  if (reduction == Reduction::mean) h /= double(p.data->size());
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  p.lambda_max = es.eigenvalues().maxCoeff();
  p.omega_max = std::sqrt(p.lambda_max);

  auto src = p.objective();
  SamplerConfig gd;
  gd.kind = SamplerKind::GD;
  gd.step_size = gd_rate;
  const Sampler sampler(gd, src->dim());
  WalkerState s(Vector::Zero(src->dim()), 0);
  for (int k = 0; k < gd_steps; ++k) sampler.step(s, *src);
  p.theta_start = s.theta;
  return p;
}

SweepResult two_cluster_sweep(const TwoClusterProblem& prob, const SweepSpec& spec) {
  auto src = prob.objective();
  const double exact = double(prob.arch.param_count()) / spec.beta;
  if (spec.observable != Observable::virial)
    throw ConfigError("two-cluster sweep measures the virial");
  return sweep(*src, prob.theta_start, Vector(), exact, spec);
}

double two_cluster_eps_fraction(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::SGLD: return 0.5;
    default: return 0.7;
  }
}

double two_cluster_eps_max(const TwoClusterProblem& prob, SamplerKind kind) {
  const double limit = kind == SamplerKind::SGLD ? 2.0 / prob.lambda_max : 2.0 / prob.omega_max;
  return two_cluster_eps_fraction(kind) * limit;
}

// ---- EQN on the Gaussian model ----

EqnStudyResult gaussian_eqn_study(const EqnStudySpec& spec) {
  const GaussianModel gm = make_gaussian_model(spec.dim, spec.eig_lo, spec.eig_hi, spec.model_seed);
  Architecture arch;
  arch.layer_sizes = {spec.dim, 1};
  auto data = std::make_shared<Dataset>(gm.data);

  EnsembleConfig cfg;
  cfg.sampler.kind = SamplerKind::BAOAB;
  cfg.sampler.step_size = spec.eps;
  cfg.sampler.friction = spec.gamma;
  cfg.sampler.inverse_temperature = spec.beta;
  cfg.sampler.mobile_mask = Vector::Ones(spec.dim + 1);
  cfg.sampler.mobile_mask[spec.dim] = 0.0;
  cfg.eta = spec.eta;
  cfg.rebuild_period = spec.rebuild_period;
  cfg.kick_form = spec.kick_form;
  cfg.sampler.validate(spec.dim + 1);

  const std::size_t l = std::size_t(spec.walkers);
  std::vector<std::unique_ptr<GradientSource>> sources;
  for (std::size_t i = 0; i < l; ++i) sources.push_back(std::make_unique<ModelObjective>(arch, data));
  EnsembleState state(std::vector<Vector>(l, Vector::Zero(spec.dim + 1)), spec.seed);

  const int ndir = std::min(spec.dim, 8);
  const Matrix v = gm.eigenvectors.leftCols(ndir);
  std::vector<std::vector<std::vector<double>>> series(
      l, std::vector<std::vector<double>>(std::size_t(ndir)));
  for (auto& w : series)
    for (auto& s : w) s.reserve(spec.steps);
  for (std::uint64_t k = 0; k < spec.steps; ++k) {
    advance_eqn(state, cfg, sources);
    for (std::size_t i = 0; i < l; ++i) {
      const Vector proj = v.transpose() * state.walkers[i].theta.head(spec.dim);
      for (int j = 0; j < ndir; ++j) series[i][std::size_t(j)].push_back(proj[j]);
    }
  }

  EqnStudyResult res;
  res.eigenvalues = gm.eigenvalues.head(ndir);
  res.iat = Vector::Zero(ndir);
  res.variance = Vector::Zero(ndir);
  for (std::size_t i = 0; i < l; ++i)
    for (int j = 0; j < ndir; ++j) {
      const auto& x = series[i][std::size_t(j)];
      IatOptions iopt;
      iopt.min_reductions = spec.iat_min_reductions;
      const IatResult r = integrated_autocorrelation_time(x, iopt);
      res.iat[j] += r.tau / double(l);
      double var = 0.0;
      for (double xv : x) var += (xv - r.mean) * (xv - r.mean);
      res.variance[j] += var / double(x.size() - 1) / double(l);
    }
  return res;
}

}  // namespace gibbsnet
