#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gibbsnet/analysis.hpp"
#include "gibbsnet/ensemble.hpp"
#include "gibbsnet/samplers.hpp"

namespace gibbsnet {

/// Weighted least squares slope of log(err) against log(eps); the point
/// with the smallest eps gets `small_eps_weight`, all others weight 1.
double fit_slope(const std::vector<double>& eps, const std::vector<double>& err,
                 double small_eps_weight = 0.1);

struct RunAverages {
  double kinetic_energy = 0.0;
  double virial = 0.0;
  double loss = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t gradient_evaluations = 0;
  double acceptance_rate = 1.0;
  Vector mean_theta;
  Vector mean_theta_sq;
};

/// Runs `steps` sampler steps from theta0 (momentum zero) and averages
/// the observables over the states after each step.
RunAverages run_and_average(const SamplerConfig& cfg, GradientSource& src, const Vector& theta0,
                            std::uint64_t steps, std::uint64_t seed, std::uint64_t stream = 0,
                            Trajectory* traj = nullptr);

// ---- harmonic problem ----

/// [1 -> 1] linear network with MSE; the bias is frozen at 0, leaving
/// L(theta) = a theta_1^2.
struct HarmonicProblem {
  Architecture arch;
  std::shared_ptr<Dataset> data;
  Vector mask;  // (1, 0)
  double a = 1.0;
  std::unique_ptr<ModelObjective> objective() const;
};

HarmonicProblem make_harmonic_problem(double a);

enum class Observable { kinetic_energy, virial };

Observable parse_observable(const std::string& name);
std::string to_string(Observable o);

/// Per-step-size, per-seed trajectory averages of one observable.
struct SweepResult {
  std::vector<double> eps;
  std::vector<std::vector<double>> values;  // [eps index][seed]
  double exact = 0.0;

  /// |mean over seeds - exact| / exact per step size.
  std::vector<double> mean_relative_error() const;
  /// sqrt(mean over seeds of ((v - exact)/exact)^2) per step size.
  std::vector<double> rms_relative_error() const;
};

struct SweepSpec {
  SamplerKind kind = SamplerKind::BAOAB;
  Observable observable = Observable::kinetic_energy;
  std::vector<double> eps;
  double friction = 1.0;
  double beta = 10.0;
  std::uint64_t steps = 1000000;
  int seeds = 20;
  std::uint64_t seed_base = 1;
};

std::vector<double> halving_grid(double eps_max, int count);

SweepResult harmonic_sweep(double a, const SweepSpec& spec);

// ---- two-cluster problem ----

/// [2 -> 1] linear perceptron with MSE on the two-cluster data, after
/// gradient-descent equilibration.
struct TwoClusterProblem {
  Architecture arch;
  std::shared_ptr<Dataset> data;
  Reduction reduction = Reduction::mean;
  Vector theta_start;
  double lambda_max = 0.0;  // largest Hessian eigenvalue
  double omega_max = 0.0;   // sqrt(lambda_max)
  std::unique_ptr<ModelObjective> objective() const;
};

TwoClusterProblem make_two_cluster_problem(int n_points = 500, std::uint64_t data_seed = 1,
                                           Reduction reduction = Reduction::mean,
                                           int gd_steps = 2000, double gd_rate = 0.03);

/// Virial sweep starting every run from the equilibrated position; the
/// exact Gibbs average is N / beta.
SweepResult two_cluster_sweep(const TwoClusterProblem& prob, const SweepSpec& spec);

/// Largest stable-region step sizes used by the ordering study, as a
/// fraction of the stability limit (2/omega_max for Langevin, 2/lambda_max
/// for SGLD).
double two_cluster_eps_fraction(SamplerKind kind);
double two_cluster_eps_max(const TwoClusterProblem& prob, SamplerKind kind);

// ---- Gaussian model and EQN ----

struct EqnStudySpec {
  int dim = 4;
  double eig_lo = 1.0, eig_hi = 100.0;
  int walkers = 1;
  double eta = 10.0;
  int rebuild_period = 1000;
  std::uint64_t steps = 50000;
  double eps = 0.125;
  double beta = 1.0;
  double gamma = 1.0;
  EqnKickForm kick_form = EqnKickForm::transpose;
  std::uint64_t model_seed = 1;
  std::uint64_t seed = 1;
  int iat_min_reductions = 3;  // block sums of 8 before the window search
};

struct EqnStudyResult {
  Vector eigenvalues;     // model curvature eigenvalues, ascending
  Vector iat;             // walker-averaged IAT of the projection on each eigenvector
  Vector variance;        // walker-averaged variance along each eigenvector
};

/// Samples the Gaussian model with L walkers (L = 1 is plain BAOAB) and
/// measures the IAT of each walker's projection on the model eigenvectors.
EqnStudyResult gaussian_eqn_study(const EqnStudySpec& spec);

}  // namespace gibbsnet
