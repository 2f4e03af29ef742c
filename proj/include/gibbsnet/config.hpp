#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gibbsnet/data.hpp"
#include "gibbsnet/ensemble.hpp"
#include "gibbsnet/objective.hpp"

namespace gibbsnet {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetSpec {
  std::string kind = "harmonic";  // harmonic | two_clusters | gaussian | mnist | csv
  double a = 1.0;                 // harmonic prefactor
  int points = 500;               // two_clusters
  double spread = 1.0;
  double relative_noise = 0.1;
  int dim = 4;                    // gaussian
  double eig_lo = 1.0, eig_hi = 100.0;
  std::uint64_t seed = 1;         // two_clusters, gaussian
  std::string path;               // mnist directory or csv file
  std::string split = "train";    // mnist: train | validation | test
  std::optional<std::pair<int, int>> digits;  // mnist two-class filter
  int limit = 0;                  // keep only the first `limit` items when > 0
  int label_columns = 1;          // csv: trailing columns holding labels
};

struct InitSpec {
  std::string kind = "zeros";  // zeros | normal | file
  double scale = 0.01;
  std::uint64_t seed = 0;
  std::string path;            // csv row of parameters
};

struct ModelSpec {
  Architecture arch;
  Reduction reduction = Reduction::sum;
  InitSpec init;
};

struct FreezeSpec {
  std::vector<Eigen::Index> indices;  // parameter indices held fixed
  std::vector<int> bias_layers;       // freeze all biases of these layers (-1 = last)
  bool empty() const { return indices.empty() && bias_layers.empty(); }
};

struct PhaseSpec {
  std::string name;
  SamplerKind kind = SamplerKind::BAOAB;
  std::string sequence;
  std::uint64_t steps = 0;
  double step_size = 0.01;
  double friction = 1.0;
  double beta = 1.0;
  Eigen::Index batch_size = 0;  // 0 = full batch
  std::optional<std::uint64_t> seed;
  int walkers = 1;
  bool ensemble = false;  // EQN when true
  double eta = 10.0;
  int rebuild_period = 1000;
  EqnKickForm kick_form = EqnKickForm::transpose;
  int hmc_inner_steps = 10;
  bool hmc_randomize_steps = false;
  bool inject_noise = true;
  FreezeSpec freeze;
  bool record = true;
  bool dump_preconditioners = false;
};

struct LandscapeSpec {
  std::vector<int> directions = {0, 63};
  std::vector<double> half_widths = {10.0, 10.0};
  int samples = 41;
  bool project_trajectory = true;
};

struct AnalysisSpec {
  int thin = 1;
  bool store_theta = false;
  std::vector<std::string> iat;  // observables: loss, kinetic_energy, virial
  bool spectrum = false;
  int spectrum_k = 0;
  std::optional<LandscapeSpec> landscape;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name = "experiment";
  std::string output;
  DatasetSpec dataset;
  ModelSpec model;
  std::vector<PhaseSpec> phases;
  AnalysisSpec analysis;
};

/// Parses and validates; throws ConfigError listing every violation.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Cross-field checks (dimension compatibility, positive step counts,
/// seeds on stochastic phases). Throws ConfigError with all problems.
void validate_config(const ExperimentConfig& cfg);
std::vector<std::string> validation_errors(const ExperimentConfig& cfg);

/// True when the phase draws random numbers.
bool phase_is_stochastic(const PhaseSpec& p);

std::shared_ptr<Dataset> build_dataset(const DatasetSpec& spec);
Vector initial_parameters(const ModelSpec& spec);
/// 1/0 mobility mask, empty when nothing is frozen.
Vector freeze_mask(const Architecture& arch, const FreezeSpec& spec);
SamplerConfig sampler_config(const PhaseSpec& p, const Architecture& arch);

/// Replaces every phase seed by override + phase index.
void apply_seed_override(ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace gibbsnet
