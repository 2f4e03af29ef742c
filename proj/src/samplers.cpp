#include "gibbsnet/samplers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

namespace {

const std::map<std::string, SamplerKind>& kind_table() {
  static const std::map<std::string, SamplerKind> t = {
      {"GD", SamplerKind::GD},       {"SGD", SamplerKind::SGD},   {"BBGD", SamplerKind::BBGD},
      {"SGLD", SamplerKind::SGLD},   {"GLA1", SamplerKind::GLA1}, {"GLA2", SamplerKind::GLA2},
      {"BAOAB", SamplerKind::BAOAB}, {"ABO", SamplerKind::ABO},   {"SPLITTING", SamplerKind::SPLITTING},
      {"HMC", SamplerKind::HMC}};
  return t;
}

bool has_mask(const SamplerConfig& cfg) { return cfg.mobile_mask.size() > 0; }

void require_finite_gradient(const WalkerState& s, const char* where) {
  if (!s.grad.allFinite()) {
    std::ostringstream os;
    os << where << ": non-finite gradient at step " << s.step_count
       << " (|theta|_2 = " << s.theta.norm() << ")";
    throw DivergenceError(os.str());
  }
}

// Gradient estimate at the current theta, from cache if still valid.
const Vector& ensure_gradient(WalkerState& s, GradientSource& src, const char* where) {
  if (!s.grad_valid) {
    s.loss = src.gradient(s.theta, s.grad);
    s.grad_valid = true;
    s.grad_full = src.exact();
    require_finite_gradient(s, where);
  }
  return s.grad;
}

const Vector& ensure_full_gradient(WalkerState& s, GradientSource& src, const char* where) {
  if (!(s.grad_valid && s.grad_full)) {
    s.loss = src.full_gradient(s.theta, s.grad);
    s.grad_valid = true;
    s.grad_full = true;
    require_finite_gradient(s, where);
  }
  return s.grad;
}

void descend(WalkerState& s, const SamplerConfig& cfg, double eps) {
  if (has_mask(cfg))
    s.theta -= eps * s.grad.cwiseProduct(cfg.mobile_mask);
  else
    s.theta -= eps * s.grad;
  s.invalidate_gradient();
}

void o_step(WalkerState& s, const SamplerConfig& cfg, double h) {
  const double alpha = std::exp(-cfg.friction * h);
  const double sigma = std::sqrt((1.0 - alpha * alpha) / cfg.inverse_temperature);
  for (Eigen::Index i = 0; i < s.momentum.size(); ++i)
    s.momentum[i] = alpha * s.momentum[i] + sigma * s.rng.normal();
  if (has_mask(cfg)) s.momentum.array() *= cfg.mobile_mask.array();
}

void b_step(WalkerState& s, const SamplerConfig& cfg, GradientSource& src, double h) {
  const Vector& g = ensure_gradient(s, src, "B step");
  if (has_mask(cfg))
    s.momentum -= h * g.cwiseProduct(cfg.mobile_mask);
  else
    s.momentum -= h * g;
}

void a_step(WalkerState& s, double h) {
  s.theta += h * s.momentum;
  s.invalidate_gradient();
}

}  // namespace

SamplerKind parse_sampler_kind(const std::string& name) {
  std::string up = name;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  const auto it = kind_table().find(up);
  if (it == kind_table().end()) throw ConfigError("unknown sampler kind '" + name + "'");
  return it->second;
}

std::string to_string(SamplerKind k) {
  for (const auto& [name, kind] : kind_table())
    if (kind == k) return name;
  return "?";
}

bool is_langevin(SamplerKind k) {
  return k == SamplerKind::GLA1 || k == SamplerKind::GLA2 || k == SamplerKind::BAOAB ||
         k == SamplerKind::ABO || k == SamplerKind::SPLITTING;
}

void SamplerConfig::validate(Eigen::Index dim) const {
  std::vector<std::string> errs;
  if (!(step_size > 0.0)) errs.push_back("step size must be positive");
  if (!(inverse_temperature > 0.0)) errs.push_back("inverse temperature must be positive");
  if (is_langevin(kind) && !(friction >= 0.0)) errs.push_back("friction must be nonnegative");
  if (kind == SamplerKind::HMC && hmc_inner_steps < 1) errs.push_back("HMC needs >= 1 inner step");
  if (kind == SamplerKind::SPLITTING) {
    try {
      parse_splitting(sequence);
    } catch (const ConfigError& e) {
      errs.push_back(e.what());
    }
  }
  if (mobile_mask.size() != 0 && mobile_mask.size() != dim)
    errs.push_back("freeze mask length " + std::to_string(mobile_mask.size()) +
                   " differs from parameter count " + std::to_string(dim));
  for (Eigen::Index i = 0; i < mobile_mask.size(); ++i)
    if (mobile_mask[i] != 0.0 && mobile_mask[i] != 1.0) {
      errs.push_back("freeze mask entries must be 0 or 1");
      break;
    }
  if (!errs.empty()) {
    std::string msg = "invalid sampler configuration:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

WalkerState::WalkerState(Vector theta0, std::uint64_t seed, std::uint64_t stream)
    : theta(std::move(theta0)), rng(seed, stream) {
  momentum = Vector::Zero(theta.size());
  grad = Vector::Zero(theta.size());
}

void WalkerState::sample_momentum(double beta, const Vector& mobile_mask) {
  const double sd = 1.0 / std::sqrt(beta);
  for (Eigen::Index i = 0; i < momentum.size(); ++i) momentum[i] = sd * rng.normal();
  if (mobile_mask.size()) momentum.array() *= mobile_mask.array();
}

std::vector<SplitOp> parse_splitting(const std::string& sequence) {
  static const std::array<const char*, 10> allowed = {"ABO",   "BAO",   "OAB",   "OBA",   "AOB",
                                                      "BOA",   "BAOAB", "ABOBA", "OBABO", "BABO"};
  if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return sequence == a; }) ==
      allowed.end())
    throw ConfigError("unknown splitting sequence '" + sequence + "'");
  std::vector<SplitOp> ops;
  for (char c : sequence) {
    const auto n = std::count(sequence.begin(), sequence.end(), c);
    ops.push_back({c, 1.0 / static_cast<double>(n)});
  }
  return ops;
}

std::string splitting_sequence(const SamplerConfig& cfg) {
  switch (cfg.kind) {
    case SamplerKind::GLA1: return "BAO";
    case SamplerKind::GLA2: return "BABO";
    case SamplerKind::BAOAB: return "BAOAB";
    case SamplerKind::ABO: return "ABO";
    case SamplerKind::SPLITTING: return cfg.sequence;
    default: throw ConfigError(to_string(cfg.kind) + " is not a splitting scheme");
  }
}

void check_divergence(const WalkerState& s, const char* where) {
  const double inf_norm = s.theta.size() ? s.theta.cwiseAbs().maxCoeff() : 0.0;
  if (!std::isfinite(inf_norm) || inf_norm > kStabilityThreshold) {
    std::ostringstream os;
    os << where << ": stability threshold exceeded at step " << s.step_count
       << " (|theta|_inf = " << inf_norm << ", |theta|_2 = " << s.theta.norm() << ")";
    throw DivergenceError(os.str());
  }
}

void step_gd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  ensure_full_gradient(s, src, "GD");
  descend(s, cfg, cfg.step_size);
  ++s.step_count;
  check_divergence(s, "GD");
}

void step_sgd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  ensure_gradient(s, src, "SGD");
  descend(s, cfg, cfg.step_size);
  ++s.step_count;
  check_divergence(s, "SGD");
}

void step_bbgd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  const Vector& g = ensure_full_gradient(s, src, "BBGD");
  double eps = cfg.step_size;
  if (s.bb_has_prev) {
    const Vector dtheta = s.theta - s.bb_prev_theta;
    const Vector dgrad = g - s.bb_prev_grad;
    const double num = dtheta.dot(dgrad);
    const double den = dgrad.squaredNorm();
    if (den > 0.0 && num > 0.0)
      eps = std::clamp(num / den, cfg.bb_min_step, cfg.bb_max_step);
    else
      eps = s.bb_step;
  }
  s.bb_prev_theta = s.theta;
  s.bb_prev_grad = g;
  s.bb_has_prev = true;
  s.bb_step = eps;
  descend(s, cfg, eps);
  ++s.step_count;
  check_divergence(s, "BBGD");
}

void step_sgld(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  ensure_gradient(s, src, "SGLD");
  descend(s, cfg, cfg.step_size);
  if (cfg.inject_noise) {
    const double amp = std::sqrt(2.0 * cfg.step_size / cfg.inverse_temperature);
    if (has_mask(cfg)) {
      for (Eigen::Index i = 0; i < s.theta.size(); ++i)
        s.theta[i] += amp * s.rng.normal() * cfg.mobile_mask[i];
    } else {
      for (Eigen::Index i = 0; i < s.theta.size(); ++i) s.theta[i] += amp * s.rng.normal();
    }
  }
  ++s.step_count;
  check_divergence(s, "SGLD");
}

void step_splitting(WalkerState& s, const SamplerConfig& cfg, GradientSource& src,
                    const std::vector<SplitOp>& ops) {
  const double eps = cfg.step_size;
  for (const SplitOp& op : ops) {
    const double h = op.fraction * eps;
    switch (op.letter) {
      case 'A': a_step(s, h); break;
      case 'B': b_step(s, cfg, src, h); break;
      case 'O': o_step(s, cfg, h); break;
      default: throw ConfigError(std::string("bad splitting letter '") + op.letter + "'");
    }
  }
  ++s.step_count;
  check_divergence(s, "splitting step");
}

bool step_hmc(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  const double eps = cfg.step_size;
  const double beta = cfg.inverse_temperature;
  ensure_full_gradient(s, src, "HMC");
  const Vector theta0 = s.theta;
  const Vector grad0 = s.grad;
  const double loss0 = s.loss;

  s.sample_momentum(beta, cfg.mobile_mask);
  const double h0 = loss0 + 0.5 * s.momentum.squaredNorm();
  const int k = cfg.hmc_randomize_steps
                    ? static_cast<int>(s.rng.uniform_int(1, cfg.hmc_inner_steps))
                    : cfg.hmc_inner_steps;
  bool finite = true;
  for (int i = 0; i < k && finite; ++i) {
    if (has_mask(cfg)) {
      s.momentum -= 0.5 * eps * s.grad.cwiseProduct(cfg.mobile_mask);
      s.theta += eps * s.momentum;
      s.loss = src.full_gradient(s.theta, s.grad);
      s.momentum -= 0.5 * eps * s.grad.cwiseProduct(cfg.mobile_mask);
    } else {
      s.momentum -= 0.5 * eps * s.grad;
      s.theta += eps * s.momentum;
      s.loss = src.full_gradient(s.theta, s.grad);
      s.momentum -= 0.5 * eps * s.grad;
    }
    finite = std::isfinite(s.loss) && s.grad.allFinite();
  }
  const double h1 = s.loss + 0.5 * s.momentum.squaredNorm();
  const double dh = h1 - h0;
  const double u = s.rng.uniform();
  const bool accept = finite && std::isfinite(dh) && u < std::exp(-beta * dh);
  ++s.hmc_proposals;
  if (accept) {
    ++s.hmc_accepted;
  } else {
    s.theta = theta0;
    s.grad = grad0;
    s.loss = loss0;
  }
  s.grad_valid = true;
  s.grad_full = true;
  ++s.step_count;
  check_divergence(s, "HMC");
  return accept;
}

void step(WalkerState& s, const SamplerConfig& cfg, GradientSource& src) {
  Sampler(cfg, s.theta.size()).step(s, src);
}

Sampler::Sampler(SamplerConfig cfg, Eigen::Index dim) : cfg_(std::move(cfg)) {
  cfg_.validate(dim);
  if (is_langevin(cfg_.kind)) ops_ = parse_splitting(splitting_sequence(cfg_));
}

void Sampler::step(WalkerState& s, GradientSource& src) const {
  switch (cfg_.kind) {
    case SamplerKind::GD: step_gd(s, cfg_, src); break;
    case SamplerKind::SGD: step_sgd(s, cfg_, src); break;
    case SamplerKind::BBGD: step_bbgd(s, cfg_, src); break;
    case SamplerKind::SGLD: step_sgld(s, cfg_, src); break;
    case SamplerKind::HMC: step_hmc(s, cfg_, src); break;
    default: step_splitting(s, cfg_, src, ops_); break;
  }
}

const Vector& full_gradient_at(WalkerState& s, GradientSource& src, Vector& scratch) {
  if (s.grad_valid && s.grad_full) return s.grad;
  if (src.exact()) {
    ensure_full_gradient(s, src, "observable");
    return s.grad;
  }
  src.full_gradient(s.theta, scratch);
  return scratch;
}

}  // namespace gibbsnet
