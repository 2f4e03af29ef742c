#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gibbsnet/analysis.hpp"
#include "gibbsnet/config.hpp"

namespace gibbsnet {

// ---- file output ----

/// Writes via a temporary sibling and rename, so readers never see a
/// half-written file.
void write_file_atomic(const std::string& path, const std::string& content);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);
/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// Trajectory CSV: step,walker,loss,kinetic_energy,virial[,theta_0..].
std::string trajectory_csv(const std::vector<const Trajectory*>& trajs);
/// index,eigenvalue rows.
std::string spectrum_csv(const SpectrumResult& s);
/// "# N k" header line, then N rows of k row-major eigenvector entries.
std::string eigenvector_matrix(const SpectrumResult& s);
std::string landscape_csv(const LandscapeGrid& g);

struct TrajectoryTable {
  std::vector<std::uint64_t> step;
  std::vector<int> walker;
  std::vector<double> loss, kinetic_energy, virial;
  Matrix theta;  // rows follow the records; zero columns when absent
};

TrajectoryTable read_trajectory_csv(const std::string& path);
SpectrumResult read_eigenvectors(const std::string& matrix_path, const std::string& spectrum_path);

// ---- manifest ----

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::uintmax_t size = 0;
  std::string sha256;
};

class Manifest {
 public:
  explicit Manifest(std::string outdir) : outdir_(std::move(outdir)) {}
  /// Writes `content` atomically under the output directory and records it.
  void add_file(const std::string& rel, const std::string& content);
  void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }
  nlohmann::json& extra() { return extra_; }
  const std::vector<ManifestEntry>& files() const { return files_; }
  /// Writes manifest.json (not listed in itself).
  void write(const std::string& status) const;

 private:
  std::string outdir_;
  std::vector<ManifestEntry> files_;
  nlohmann::json extra_ = nlohmann::json::object();
};

// ---- single experiment ----

struct RunOptions {
  int threads = 1;
};

struct PhaseSummary {
  std::string name;
  double wall_seconds = 0.0;
  std::uint64_t steps = 0;
  std::vector<double> mean_loss, mean_kinetic_energy, mean_virial;  // per walker
  std::vector<double> acceptance_rate;
  std::uint64_t gradient_evaluations = 0;
};

struct RunResult {
  std::string status = "complete";  // complete | diverged
  std::vector<PhaseSummary> phases;
  std::vector<Vector> final_theta;  // per walker
};

/// Executes all phases in order, carrying walker state, and writes the
/// declared outputs plus manifest.json into `outdir`. A divergence writes
/// whatever was produced, marks the manifest "diverged" and rethrows.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& outdir,
                         const RunOptions& opt = {});

// ---- recipes and aggregation ----

struct RecipeOptions {
  int threads = 1;
  std::optional<int> seeds;             // replaces the recipe's seed count
  std::optional<std::uint64_t> steps;   // replaces the recipe's step count
  std::uint64_t seed_base = 1;
  std::string mnist_dir;                // extended recipes
};

std::vector<std::string> recipe_names();

/// Runs every point of the recipe that has no result file yet (so an
/// interrupted sweep resumes), then aggregates into `outdir`.
void run_recipe(const std::string& name, const std::string& outdir, const RecipeOptions& opt);

/// Groups point files under `points_dir` by their "group" object, writes
/// aggregate.csv (mean, std, relative errors per group and step size)
/// and slopes.csv (fitted error slopes per group and observable).
void aggregate_points(const std::string& points_dir, const std::string& outdir);

// ---- post-processing subcommands ----

/// IAT per walker for each named column of a trajectory CSV.
void iat_command(const std::string& trajectory_path, const std::vector<std::string>& columns,
                 const std::string& outdir);

/// Covariance spectrum of the theta columns of a trajectory CSV.
void spectrum_command(const std::string& trajectory_path, CovarianceMode mode, int k,
                      const std::string& outdir);

struct LandscapeRequest {
  std::string spectrum_dir;  // holds eigenvectors.txt and spectrum.csv
  std::string center_dir;    // holds final_state.csv (walker 0 is the center); default spectrum_dir
  std::vector<int> directions = {0, 63};
  std::vector<double> half_widths = {10.0, 10.0};
  int samples = 41;
  std::vector<std::string> trajectories;  // trajectory CSVs (with theta) to project
};

/// Loss grid around the stored center along two stored eigenvectors, using
/// the full dataset of `cfg`; writes landscape.csv and projection.csv.
void landscape_command(const ExperimentConfig& cfg, const LandscapeRequest& req,
                       const std::string& outdir);

}  // namespace gibbsnet
