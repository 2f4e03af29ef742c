#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gibbsnet/objective.hpp"
#include "gibbsnet/samplers.hpp"

namespace gibbsnet {

double kinetic_energy(const Vector& p);
double virial(const Vector& theta, const Vector& grad);

/// Prefix means m_K = (1/(K+1)) sum_{k<=K} x_k.
std::vector<double> running_average(const std::vector<double>& x);

struct TrajectoryRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double kinetic_energy = 0.0;
  double virial = 0.0;
};

class Trajectory {
 public:
  explicit Trajectory(int thin_interval = 1, int walker_id = 0, bool store_theta = false);

  /// Records must arrive with steps increasing by exactly thin_interval.
  void append(const TrajectoryRecord& rec, const Vector* theta = nullptr);

  int thin_interval() const { return thin_; }
  int walker_id() const { return walker_; }
  bool stores_theta() const { return store_theta_; }
  const std::vector<TrajectoryRecord>& records() const { return records_; }
  const std::vector<Vector>& thetas() const { return thetas_; }
  std::size_t size() const { return records_.size(); }

  std::vector<double> losses() const;
  std::vector<double> kinetic_energies() const;
  std::vector<double> virials() const;
  /// Time series of (theta - center) . direction over the stored snapshots.
  std::vector<double> projection(const Vector& direction, const Vector& center) const;

 private:
  int thin_;
  int walker_;
  bool store_theta_;
  std::vector<TrajectoryRecord> records_;
  std::vector<Vector> thetas_;
};

/// Per-step observables and their running sums, with thinned recording.
class Observer {
 public:
  Observer(Trajectory* traj = nullptr) : traj_(traj) {}

  /// Evaluates loss, kinetic energy and virial at the walker's current
  /// state (exact full gradient for the virial) and accumulates them.
  void observe(WalkerState& s, GradientSource& src);

  std::uint64_t count() const { return n_; }
  double mean_loss() const { return n_ ? sum_loss_ / double(n_) : 0.0; }
  double mean_kinetic_energy() const { return n_ ? sum_ke_ / double(n_) : 0.0; }
  double mean_virial() const { return n_ ? sum_virial_ / double(n_) : 0.0; }
  double mean_theta_sq(Eigen::Index i) const;
  const Vector& sum_theta() const { return sum_theta_; }
  const Vector& sum_theta_sq() const { return sum_theta_sq_; }

 private:
  Trajectory* traj_;
  std::uint64_t n_ = 0;
  double sum_loss_ = 0.0, sum_ke_ = 0.0, sum_virial_ = 0.0;
  Vector sum_theta_, sum_theta_sq_;
  Vector scratch_;
};

struct IatOptions {
  double window_factor = 5.0;  // accept the first window W with W >= c * tau(W)
  int min_window = 10;
  int max_window = 4096;       // further capped at n / 5
  int max_reductions = 3;      // pairwise-sum recursion depth
  int min_reductions = 0;      // reductions applied before the first window search
  double sampling_interval = 1.0;  // multiplies the reported tau
};

struct IatResult {
  double tau = 0.0;    // in units of the original steps (times sampling_interval)
  double mean = 0.0;
  double sigma = 0.0;  // standard error of the mean
  int window = 0;      // accepted window at the final level
  int reductions = 0;  // pairwise reductions used
};

/// Throws AnalysisError for series shorter than 64, constant series, or
/// when no self-consistent window exists after the allowed reductions.
IatResult integrated_autocorrelation_time(const std::vector<double>& series,
                                          const IatOptions& opt = {});

struct SpectrumResult {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalues(j)
};

inline constexpr Eigen::Index kDenseEigenLimit = 4000;

/// Mean-subtracted sample covariance of the rows of `snapshots`
/// (denominator n - 1).
Matrix sample_covariance(const Matrix& snapshots);

/// Top `k` eigenpairs of the covariance of the snapshot rows. Dense
/// symmetric solver when N <= dense_limit, otherwise power iteration with
/// deflation on the implicit covariance operator. k = 0 means all pairs
/// on the dense path and 20 on the iterative path.
SpectrumResult snapshot_spectrum(const Matrix& snapshots, Eigen::Index k = 0,
                                 Eigen::Index dense_limit = kDenseEigenLimit);

/// Power iteration with deflation on a symmetric PSD operator.
SpectrumResult power_iteration_topk(const std::function<void(const Vector&, Vector&)>& apply,
                                    Eigen::Index n, Eigen::Index k, double tol = 1e-10,
                                    int max_iter = 100000, std::uint64_t seed = 7);

enum class CovarianceMode { pooled, per_walker };

/// Pooled: one spectrum over all snapshots of all trajectories. Per
/// walker: one spectrum per trajectory.
std::vector<SpectrumResult> trajectory_covariance(const std::vector<const Trajectory*>& trajs,
                                                  CovarianceMode mode, Eigen::Index k = 0);

struct LandscapeGrid {
  Vector c0, c1;            // axis coordinates
  Matrix loss;              // loss(i, j) at center + c0(i) v0 + c1(j) v1
  double reference = 0.0;   // L0, the lowest loss seen
  Matrix log_shifted;       // ln max(|L - L0|, 1e-16)
};

/// Directions of norm != 1 are normalized (with a warning on stderr);
/// zero directions throw ConfigError. `extra_losses` joins the grid in
/// the choice of L0.
LandscapeGrid landscape_grid(GradientSource& src, const Vector& center, Vector v0, Vector v1,
                             double half_width0, double half_width1, int samples_per_axis,
                             const std::vector<double>& extra_losses = {});

struct ProjectedPoint {
  double c0, c1, loss;
};

/// Projection coordinates (theta - center) . v_j with the full loss at
/// theta itself.
std::vector<ProjectedPoint> project_trajectory(const std::vector<Vector>& thetas,
                                               const Vector& center, const Vector& v0,
                                               const Vector& v1, GradientSource& src);

}  // namespace gibbsnet
