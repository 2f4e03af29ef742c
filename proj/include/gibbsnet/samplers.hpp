#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gibbsnet/objective.hpp"
#include "gibbsnet/rng.hpp"

namespace gibbsnet {

enum class SamplerKind { GD, SGD, BBGD, SGLD, GLA1, GLA2, BAOAB, ABO, SPLITTING, HMC };

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind k);
bool is_langevin(SamplerKind k);

/// Parameters beyond this infinity norm count as divergence.
inline constexpr double kStabilityThreshold = 1e8;

struct SamplerConfig {
  SamplerKind kind = SamplerKind::BAOAB;
  double step_size = 0.01;
  double friction = 1.0;              // gamma
  double inverse_temperature = 1.0;   // beta
  std::string sequence;               // letters for SPLITTING, e.g. "OBABO"
  int hmc_inner_steps = 10;
  bool hmc_randomize_steps = false;
  bool inject_noise = true;           // false gives the beta -> infinity limit for SGLD
  double bb_min_step = 1e-6;
  double bb_max_step = 10.0;
  /// 1 for mobile coordinates, 0 for frozen ones. Empty means all mobile.
  Vector mobile_mask;

  /// Throws ConfigError on invalid values.
  void validate(Eigen::Index dim) const;
};

struct WalkerState {
  Vector theta;
  Vector momentum;
  Vector grad;            // gradient at theta when grad_valid
  double loss = 0.0;      // loss estimate matching grad
  bool grad_valid = false;
  bool grad_full = false;  // grad came from the exact full gradient
  Rng rng;
  std::uint64_t step_count = 0;

  // Barzilai-Borwein history.
  Vector bb_prev_theta, bb_prev_grad;
  bool bb_has_prev = false;
  double bb_step = 0.0;

  // HMC bookkeeping.
  std::uint64_t hmc_proposals = 0, hmc_accepted = 0;

  WalkerState() = default;
  WalkerState(Vector theta0, std::uint64_t seed, std::uint64_t stream = 0);

  void invalidate_gradient() { grad_valid = false; }
  /// Draws p ~ N(0, beta^{-1} I) (frozen coordinates stay 0).
  void sample_momentum(double beta, const Vector& mobile_mask = Vector());
};

/// One splitting letter with its substep length as a fraction of epsilon.
struct SplitOp {
  char letter;
  double fraction;
};

/// Each letter's substeps share the step evenly: a letter occurring twice
/// gets epsilon/2 per occurrence. Accepts ABO, BAO, OAB, OBA, AOB, BOA,
/// BAOAB, ABOBA, OBABO and BABO.
std::vector<SplitOp> parse_splitting(const std::string& sequence);

/// Letter sequence used for a Langevin kind (GLA1 = BAO, GLA2 = BABO).
std::string splitting_sequence(const SamplerConfig& cfg);

void step_gd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);
void step_sgd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);
void step_bbgd(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);
void step_sgld(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);
void step_splitting(WalkerState& s, const SamplerConfig& cfg, GradientSource& src,
                    const std::vector<SplitOp>& ops);
/// Returns whether the proposal was accepted.
bool step_hmc(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);

/// Dispatches on cfg.kind. Splitting sequences are parsed per call; use
/// Sampler for tight loops.
void step(WalkerState& s, const SamplerConfig& cfg, GradientSource& src);

/// A configured sampler with the splitting sequence parsed once.
class Sampler {
 public:
  explicit Sampler(SamplerConfig cfg, Eigen::Index dim);
  void step(WalkerState& s, GradientSource& src) const;
  const SamplerConfig& config() const { return cfg_; }
  SamplerConfig& mutable_config() { return cfg_; }

 private:
  SamplerConfig cfg_;
  std::vector<SplitOp> ops_;
};

/// Ensures s.grad holds the exact gradient at s.theta; reuses the cache
/// when possible and otherwise stores the fresh value as the cache when
/// the source is exact.
const Vector& full_gradient_at(WalkerState& s, GradientSource& src, Vector& scratch);

/// Throws DivergenceError when theta is non-finite or exceeds the
/// stability threshold.
void check_divergence(const WalkerState& s, const char* where);

}  // namespace gibbsnet
