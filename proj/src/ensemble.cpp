#include "gibbsnet/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

EqnKickForm parse_kick_form(const std::string& name) {
  if (name == "printed") return EqnKickForm::printed;
  if (name == "transpose") return EqnKickForm::transpose;
  throw ConfigError("unknown EQN kick form '" + name + "' (expected printed or transpose)");
}

EnsembleState::EnsembleState(const std::vector<Vector>& starts, std::uint64_t seed) {
  if (starts.empty()) throw ConfigError("ensemble needs at least one walker");
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (starts[i].size() != starts[0].size())
      throw ConfigError("walker start positions differ in dimension");
    walkers.emplace_back(starts[i], seed, i);
  }
  factors_.resize(starts.size());
  identity_.assign(starts.size(), true);
}

Matrix covariance_excluding(const std::vector<WalkerState>& walkers, std::size_t skip) {
  const Eigen::Index n = walkers.front().theta.size();
  const double count = static_cast<double>(walkers.size() - 1);
  Vector mean = Vector::Zero(n);
  for (std::size_t j = 0; j < walkers.size(); ++j)
    if (j != skip) mean += walkers[j].theta;
  mean /= count;
  Matrix cov = Matrix::Zero(n, n);
  for (std::size_t j = 0; j < walkers.size(); ++j) {
    if (j == skip) continue;
    const Vector d = walkers[j].theta - mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(d);
  }
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  return cov / count;
}

void rebuild_preconditioners(EnsembleState& state, double eta) {
  if (eta < 0.0) throw ConfigError("covariance blending must be nonnegative");
  const std::size_t l = state.size();
  if (eta == 0.0 || l < 2) {
    state.identity_.assign(l, true);
    return;
  }
  const Eigen::Index n = state.walkers.front().theta.size();
  for (std::size_t i = 0; i < l; ++i) {
    Matrix a = eta * covariance_excluding(state.walkers, i);
    a.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
      a.diagonal().array() += 1e-12;
      llt.compute(a);
      if (llt.info() != Eigen::Success)
        throw DivergenceError("Cholesky factorization of walker " + std::to_string(i) +
                              " preconditioner failed after jitter");
    }
    state.factors_[i] = llt.matrixL();
    const Matrix& f = state.factors_[i];
    if ((f.diagonal().array() <= 0.0).any() || f.rows() != n)
      throw DivergenceError("preconditioner factor lost positive diagonal");
    const double resid = (f * f.transpose() - a).cwiseAbs().maxCoeff();
    if (!(resid <= 1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff())))
      throw DivergenceError("preconditioner factor residual " + std::to_string(resid) +
                            " for walker " + std::to_string(i));
    state.identity_[i] = false;
  }
}

namespace {

void masked_sub(Vector& p, double h, const Vector& g, const Vector& mask) {
  if (mask.size())
    p -= h * g.cwiseProduct(mask);
  else
    p -= h * g;
}

void masked_add(Vector& theta, double h, const Vector& v, const Vector& mask) {
  if (mask.size())
    theta += h * v.cwiseProduct(mask);
  else
    theta += h * v;
}

void o_step(WalkerState& s, const SamplerConfig& cfg, double h) {
  const double alpha = std::exp(-cfg.friction * h);
  const double sigma = std::sqrt((1.0 - alpha * alpha) / cfg.inverse_temperature);
  for (Eigen::Index i = 0; i < s.momentum.size(); ++i)
    s.momentum[i] = alpha * s.momentum[i] + sigma * s.rng.normal();
  if (cfg.mobile_mask.size()) s.momentum.array() *= cfg.mobile_mask.array();
}

const Vector& gradient(WalkerState& s, GradientSource& src) {
  if (!s.grad_valid) {
    s.loss = src.gradient(s.theta, s.grad);
    s.grad_valid = true;
    s.grad_full = src.exact();
    if (!s.grad.allFinite())
      throw DivergenceError("EQN: non-finite gradient at step " + std::to_string(s.step_count));
  }
  return s.grad;
}

}  // namespace

void step_eqn(EnsembleState& state, const EnsembleConfig& cfg,
              std::vector<std::unique_ptr<GradientSource>>& sources) {
  if (sources.size() != state.size())
    throw ConfigError("EQN needs one gradient source per walker");
  const SamplerConfig& sc = cfg.sampler;
  const double h = 0.5 * sc.step_size;
  const Vector& mask = sc.mobile_mask;
  Vector tmp;
  for (std::size_t i = 0; i < state.size(); ++i) {
    WalkerState& s = state.walkers[i];
    GradientSource& src = *sources[i];
    if (state.is_identity(i)) {
      masked_sub(s.momentum, h, gradient(s, src), mask);
      s.theta += h * s.momentum;
      s.invalidate_gradient();
      o_step(s, sc, sc.step_size);
      s.theta += h * s.momentum;
      s.invalidate_gradient();
      masked_sub(s.momentum, h, gradient(s, src), mask);
    } else {
      const Matrix& b = state.preconditioner(i);
      const auto bl = b.triangularView<Eigen::Lower>();
      const Vector& g0 = gradient(s, src);
      if (cfg.kick_form == EqnKickForm::printed)
        tmp.noalias() = bl * g0;
      else
        tmp.noalias() = bl.transpose() * g0;
      masked_sub(s.momentum, h, tmp, mask);
      tmp.noalias() = bl * s.momentum;
      masked_add(s.theta, h, tmp, mask);
      s.invalidate_gradient();
      // B_i is built from the other walkers only and frozen between
      // rebuilds, so div(B_i^T) with respect to theta_i vanishes.
      o_step(s, sc, sc.step_size);
      tmp.noalias() = bl * s.momentum;
      masked_add(s.theta, h, tmp, mask);
      const Vector& g1 = gradient(s, src);
      if (cfg.kick_form == EqnKickForm::printed) {
        masked_sub(s.momentum, h, g1, mask);
      } else {
        tmp.noalias() = bl.transpose() * g1;
        masked_sub(s.momentum, h, tmp, mask);
      }
    }
    ++s.step_count;
    check_divergence(s, "EQN step");
  }
}

bool advance_eqn(EnsembleState& state, const EnsembleConfig& cfg,
                 std::vector<std::unique_ptr<GradientSource>>& sources) {
  if (cfg.rebuild_period <= 0) throw ConfigError("rebuild period must be positive");
  const bool rebuild = state.walkers.front().step_count % std::uint64_t(cfg.rebuild_period) == 0;
  if (rebuild) rebuild_preconditioners(state, cfg.eta);
  step_eqn(state, cfg, sources);
  return rebuild;
}

void dump_preconditioner_spectra(const EnsembleState& state, std::uint64_t step, std::ostream& os) {
  os << std::setprecision(17);
  for (std::size_t i = 0; i < state.size(); ++i) {
    os << step << ',' << i;
    if (state.is_identity(i)) {
      for (Eigen::Index k = 0; k < state.walkers[i].theta.size(); ++k) os << ",1";
    } else {
      const Matrix& b = state.preconditioner(i);
      Eigen::SelfAdjointEigenSolver<Matrix> es(b * b.transpose(), Eigen::EigenvaluesOnly);
      const Vector ev = es.eigenvalues().reverse();
      for (Eigen::Index k = 0; k < ev.size(); ++k) os << ',' << ev[k];
    }
    os << '\n';
  }
}

}  // namespace gibbsnet
