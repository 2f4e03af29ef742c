#pragma once

#include <memory>
#include <ostream>
#include <vector>

#include "gibbsnet/samplers.hpp"

namespace gibbsnet {

/// How the two momentum kicks of a preconditioned step use B.
///   printed:   p -= (eps/2) B grad first, unpreconditioned final kick.
///   transpose: both kicks use B^T grad, the form that keeps the Gibbs
///              measure invariant for constant B.
enum class EqnKickForm { printed, transpose };

EqnKickForm parse_kick_form(const std::string& name);

struct EnsembleConfig {
  SamplerConfig sampler;  // step size, friction, beta, freeze mask
  double eta = 10.0;      // covariance blending
  int rebuild_period = 1000;
  EqnKickForm kick_form = EqnKickForm::transpose;
};

class EnsembleState {
 public:
  /// Walkers start at the given positions with per-walker RNG streams
  /// 0..L-1 drawn from `seed`.
  EnsembleState(const std::vector<Vector>& starts, std::uint64_t seed);

  std::size_t size() const { return walkers.size(); }
  bool is_identity(std::size_t i) const { return identity_[i]; }
  /// Lower Cholesky factor of walker i (meaningless when is_identity(i)).
  const Matrix& preconditioner(std::size_t i) const { return factors_[i]; }

  std::vector<WalkerState> walkers;

 private:
  friend void rebuild_preconditioners(EnsembleState&, double);
  std::vector<Matrix> factors_;
  std::vector<bool> identity_;
};

/// Covariance of all positions except walker `skip`, normalized by the
/// number of walkers it averages over (L - 1).
Matrix covariance_excluding(const std::vector<WalkerState>& walkers, std::size_t skip);

/// B_i B_i^T = I + eta Cov(others) for every walker. eta = 0 or a single
/// walker leaves the identity marker in place.
void rebuild_preconditioners(EnsembleState& state, double eta);

/// Advances every walker by one preconditioned BAOAB step. `sources` holds
/// one gradient source per walker.
void step_eqn(EnsembleState& state, const EnsembleConfig& cfg,
              std::vector<std::unique_ptr<GradientSource>>& sources);

/// Rebuilds on schedule (before steps whose index is a multiple of
/// rebuild_period) and steps. Returns true when a rebuild happened.
bool advance_eqn(EnsembleState& state, const EnsembleConfig& cfg,
                 std::vector<std::unique_ptr<GradientSource>>& sources);

/// Appends CSV rows "step,walker,eigenvalues..." with the eigenvalues of
/// B B^T for each walker.
void dump_preconditioner_spectra(const EnsembleState& state, std::uint64_t step, std::ostream& os);

}  // namespace gibbsnet
