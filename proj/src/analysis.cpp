#include "gibbsnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

double kinetic_energy(const Vector& p) { return 0.5 * p.squaredNorm(); }

double virial(const Vector& theta, const Vector& grad) { return theta.dot(grad); }

std::vector<double> running_average(const std::vector<double>& x) {
  if (x.empty()) throw AnalysisError("running average of an empty series");
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sum += x[k];
    out[k] = sum / static_cast<double>(k + 1);
  }
  return out;
}

// ---- trajectories ----

Trajectory::Trajectory(int thin_interval, int walker_id, bool store_theta)
    : thin_(thin_interval), walker_(walker_id), store_theta_(store_theta) {
  if (thin_ < 1) throw ConfigError("thin interval must be >= 1");
}

void Trajectory::append(const TrajectoryRecord& rec, const Vector* theta) {
  if (!records_.empty() && rec.step != records_.back().step + std::uint64_t(thin_)) {
    std::ostringstream os;
    os << "trajectory step " << rec.step << " does not follow " << records_.back().step
       << " at thin interval " << thin_;
    throw AnalysisError(os.str());
  }
  if (!(rec.kinetic_energy >= 0.0)) throw AnalysisError("negative or NaN kinetic energy");
  if (store_theta_ && !theta) throw AnalysisError("trajectory stores theta but none was given");
  records_.push_back(rec);
  if (store_theta_) thetas_.push_back(*theta);
}

std::vector<double> Trajectory::losses() const {
  std::vector<double> v;
  v.reserve(records_.size());
  for (const auto& r : records_) v.push_back(r.loss);
  return v;
}

std::vector<double> Trajectory::kinetic_energies() const {
  std::vector<double> v;
  v.reserve(records_.size());
  for (const auto& r : records_) v.push_back(r.kinetic_energy);
  return v;
}

std::vector<double> Trajectory::virials() const {
  std::vector<double> v;
  v.reserve(records_.size());
  for (const auto& r : records_) v.push_back(r.virial);
  return v;
}

std::vector<double> Trajectory::projection(const Vector& direction, const Vector& center) const {
  if (!store_theta_) throw AnalysisError("trajectory has no stored parameter snapshots");
  std::vector<double> v;
  v.reserve(thetas_.size());
  for (const auto& t : thetas_) v.push_back((t - center).dot(direction));
  return v;
}

void Observer::observe(WalkerState& s, GradientSource& src) {
  double loss;
  const Vector* g;
  if (s.grad_valid && s.grad_full) {
    loss = s.loss;
    g = &s.grad;
  } else if (src.exact()) {
    s.loss = src.full_gradient(s.theta, s.grad);
    s.grad_valid = s.grad_full = true;
    loss = s.loss;
    g = &s.grad;
  } else {
    loss = src.full_gradient(s.theta, scratch_);
    g = &scratch_;
  }
  const double ke = kinetic_energy(s.momentum);
  const double vir = virial(s.theta, *g);
  ++n_;
  sum_loss_ += loss;
  sum_ke_ += ke;
  sum_virial_ += vir;
  if (sum_theta_.size() != s.theta.size()) {
    sum_theta_ = Vector::Zero(s.theta.size());
    sum_theta_sq_ = Vector::Zero(s.theta.size());
  }
  sum_theta_ += s.theta;
  sum_theta_sq_ += s.theta.cwiseAbs2();
  if (traj_ && s.step_count % std::uint64_t(traj_->thin_interval()) == 0)
    traj_->append({s.step_count, loss, ke, vir}, &s.theta);
}

double Observer::mean_theta_sq(Eigen::Index i) const {
  return n_ ? sum_theta_sq_[i] / double(n_) : 0.0;
}

// ---- integrated autocorrelation time ----

namespace {

struct WindowResult {
  bool converged = false;
  double tau = 0.0;
  int window = 0;
};

WindowResult self_consistent_window(const std::vector<double>& x, double c0,
                                    const IatOptions& opt) {
  const std::size_t n = x.size();
  const int wmax = static_cast<int>(std::min<std::size_t>(n / 5, std::size_t(opt.max_window)));
  double tau = 1.0;
  for (int w = 1; w <= wmax; ++w) {
    double acc = 0.0;
    const double* a = x.data();
    const double* b = x.data() + w;
    const std::size_t m = n - std::size_t(w);
    for (std::size_t i = 0; i < m; ++i) acc += a[i] * b[i];
    tau += 2.0 * (acc / static_cast<double>(n)) / c0;
    if (w >= opt.min_window && w >= opt.window_factor * tau) return {true, tau, w};
  }
  return {false, tau, wmax};
}

}  // namespace

IatResult integrated_autocorrelation_time(const std::vector<double>& series, const IatOptions& opt) {
  if (series.size() < 64) throw AnalysisError("IAT needs a series of length >= 64");
  IatResult res;
  double sum = 0.0;
  for (double v : series) sum += v;
  res.mean = sum / static_cast<double>(series.size());

  std::vector<double> x(series.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = series[i] - res.mean;
  double c0_orig = 0.0;
  for (double v : x) c0_orig += v * v;
  c0_orig /= static_cast<double>(x.size());
  if (!(c0_orig > 0.0) || c0_orig <= 1e-300)
    throw AnalysisError("IAT undefined for a constant series (zero variance)");

  // Each reduction halves the series by summing neighbours; a tau found at
  // level r converts back through tau_x = C_y(0) tau_y / (2 C_x(0)).
  double c0 = c0_orig;
  double scale = 1.0;  // tau_orig = scale * tau_level
  const int levels = std::max(opt.max_reductions, opt.min_reductions);
  for (int level = 0; level <= levels; ++level) {
    if (x.size() < 64) break;
    const WindowResult w = level >= opt.min_reductions ? self_consistent_window(x, c0, opt)
                                                       : WindowResult{};
    if (w.converged) {
      res.tau = scale * w.tau * opt.sampling_interval;
      res.window = w.window;
      res.reductions = level;
      res.sigma = std::sqrt(c0_orig * scale * w.tau / static_cast<double>(series.size()));
      return res;
    }
    if (level == levels) break;
    std::vector<double> y(x.size() / 2);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[2 * i] + x[2 * i + 1];
    double my = 0.0;
    for (double v : y) my += v;
    my /= static_cast<double>(y.size());
    double cy = 0.0;
    for (double& v : y) {
      v -= my;
      cy += v * v;
    }
    cy /= static_cast<double>(y.size());
    if (!(cy > 0.0)) throw AnalysisError("IAT not converged (pairwise sums have zero variance)");
    scale *= cy / (2.0 * c0);
    c0 = cy;
    x.swap(y);
  }
  throw AnalysisError("IAT not converged: no self-consistent window after " +
                      std::to_string(opt.max_reductions) + " pairwise reductions (series length " +
                      std::to_string(series.size()) + ")");
}

// ---- spectra ----

Matrix sample_covariance(const Matrix& snapshots) {
  if (snapshots.rows() < 2) throw AnalysisError("covariance needs at least 2 snapshots");
  const Matrix centered = snapshots.rowwise() - snapshots.colwise().mean();
  Matrix cov = Matrix::Zero(snapshots.cols(), snapshots.cols());
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  return cov / static_cast<double>(snapshots.rows() - 1);
}

SpectrumResult power_iteration_topk(const std::function<void(const Vector&, Vector&)>& apply,
                                    Eigen::Index n, Eigen::Index k, double tol, int max_iter,
                                    std::uint64_t seed) {
  k = std::min(k, n);
  SpectrumResult out;
  out.eigenvalues = Vector::Zero(k);
  out.eigenvectors = Matrix::Zero(n, k);
  Rng rng(seed);
  Vector v(n), w(n);
  double scale = 0.0;  // largest eigenvalue, for relative tolerances
  auto deflate = [&](Vector& u, Eigen::Index found) {
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index j = 0; j < found; ++j)
        u -= out.eigenvectors.col(j).dot(u) * out.eigenvectors.col(j);
  };
  for (Eigen::Index j = 0; j < k; ++j) {
    rng.fill_normal(v);
    deflate(v, j);
    if (v.norm() == 0.0) break;
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      apply(v, w);
      deflate(w, j);
      lambda = v.dot(w);
      const double resid = (w - lambda * v).norm();
      const double ref = std::max(scale, std::abs(lambda));
      const double wn = w.norm();
      if (wn == 0.0) {
        lambda = 0.0;
        break;
      }
      if (resid <= tol * (ref > 0.0 ? ref : 1.0)) break;
      v = w / wn;
    }
    if (j == 0) scale = std::abs(lambda);
    out.eigenvalues(j) = lambda;
    out.eigenvectors.col(j) = v;
  }
  return out;
}

SpectrumResult snapshot_spectrum(const Matrix& snapshots, Eigen::Index k, Eigen::Index dense_limit) {
  if (snapshots.rows() < 2) throw AnalysisError("covariance needs at least 2 snapshots");
  const Eigen::Index n = snapshots.cols();
  if (n <= dense_limit) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sample_covariance(snapshots));
    if (es.info() != Eigen::Success) throw AnalysisError("symmetric eigensolver failed");
    const Eigen::Index kk = (k <= 0 || k > n) ? n : k;
    SpectrumResult out;
    out.eigenvalues = es.eigenvalues().reverse().head(kk);
    out.eigenvectors = es.eigenvectors().rowwise().reverse().leftCols(kk);
    return out;
  }
  const Matrix centered = snapshots.rowwise() - snapshots.colwise().mean();
  const double denom = static_cast<double>(snapshots.rows() - 1);
  Vector tmp;
  auto apply = [&](const Vector& v, Vector& out) {
    tmp.noalias() = centered * v;
    out.noalias() = centered.transpose() * tmp;
    out /= denom;
  };
  return power_iteration_topk(apply, n, k <= 0 ? 20 : k, 1e-10, 20000);
}

std::vector<SpectrumResult> trajectory_covariance(const std::vector<const Trajectory*>& trajs,
                                                  CovarianceMode mode, Eigen::Index k) {
  if (trajs.empty()) throw AnalysisError("no trajectories given");
  for (const auto* t : trajs)
    if (!t->stores_theta()) throw AnalysisError("trajectory has no stored parameter snapshots");
  auto stack = [](const std::vector<const Trajectory*>& ts) {
    Eigen::Index rows = 0, cols = -1;
    for (const auto* t : ts) {
      rows += Eigen::Index(t->thetas().size());
      if (!t->thetas().empty()) cols = t->thetas().front().size();
    }
    if (rows < 2) throw AnalysisError("covariance needs at least 2 snapshots");
    Matrix m(rows, cols);
    Eigen::Index r = 0;
    for (const auto* t : ts)
      for (const auto& th : t->thetas()) m.row(r++) = th.transpose();
    return m;
  };
  std::vector<SpectrumResult> out;
  if (mode == CovarianceMode::pooled) {
    out.push_back(snapshot_spectrum(stack(trajs), k));
  } else {
    for (const auto* t : trajs) out.push_back(snapshot_spectrum(stack({t}), k));
  }
  return out;
}

// ---- landscape ----

namespace {

Vector unit_direction(Vector v, const Vector& center, const char* name) {
  if (v.size() != center.size())
    throw ConfigError(std::string("direction ") + name + " has wrong length");
  const double norm = v.norm();
  if (!(norm > 0.0)) throw ConfigError(std::string("direction ") + name + " is zero");
  if (std::abs(norm - 1.0) > 1e-12) {
    std::cerr << "warning: direction " << name << " has norm " << norm << ", normalizing\n";
    v /= norm;
  }
  return v;
}

}  // namespace

LandscapeGrid landscape_grid(GradientSource& src, const Vector& center, Vector v0, Vector v1,
                             double half_width0, double half_width1, int samples_per_axis,
                             const std::vector<double>& extra_losses) {
  if (samples_per_axis < 2) throw ConfigError("landscape grid needs >= 2 samples per axis");
  if (!(half_width0 > 0.0 && half_width1 > 0.0))
    throw ConfigError("landscape half widths must be positive");
  v0 = unit_direction(std::move(v0), center, "v0");
  v1 = unit_direction(std::move(v1), center, "v1");
  LandscapeGrid g;
  g.c0 = Vector::LinSpaced(samples_per_axis, -half_width0, half_width0);
  g.c1 = Vector::LinSpaced(samples_per_axis, -half_width1, half_width1);
  g.loss.resize(samples_per_axis, samples_per_axis);
  Vector theta(center.size());
  for (int i = 0; i < samples_per_axis; ++i)
    for (int j = 0; j < samples_per_axis; ++j) {
      theta = center + g.c0(i) * v0 + g.c1(j) * v1;
      g.loss(i, j) = src.full_loss(theta);
    }
  g.reference = g.loss.minCoeff();
  for (double l : extra_losses) g.reference = std::min(g.reference, l);
  g.log_shifted = (g.loss.array() - g.reference).abs().max(1e-16).log().matrix();
  return g;
}

std::vector<ProjectedPoint> project_trajectory(const std::vector<Vector>& thetas,
                                               const Vector& center, const Vector& v0,
                                               const Vector& v1, GradientSource& src) {
  std::vector<ProjectedPoint> out;
  out.reserve(thetas.size());
  for (const auto& th : thetas) {
    const Vector d = th - center;
    out.push_back({d.dot(v0), d.dot(v1), src.full_loss(th)});
  }
  return out;
}

}  // namespace gibbsnet
