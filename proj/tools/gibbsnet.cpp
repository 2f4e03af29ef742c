// Command-line front end: run configs or recipes, then post-process outputs.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gibbsnet/errors.hpp"
#include "gibbsnet/runner.hpp"
#include "gibbsnet/version.hpp"

namespace {

using namespace gibbsnet;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitAnalysis = 4;

struct RunArgs {
  std::string config, recipe, output, mnist_dir;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> seeds;
  std::optional<std::uint64_t> steps;
  int threads = 1;
};

int do_run(const RunArgs& a) {
  if (a.config.empty() == a.recipe.empty()) throw ConfigError("run needs exactly one of --config and --recipe");
  if (a.threads < 1) throw ConfigError("--threads must be >= 1");
  if (!a.recipe.empty()) {
    if (a.output.empty()) throw ConfigError("--output is required with --recipe");
    RecipeOptions opt;
    opt.threads = a.threads;
    opt.seeds = a.seeds;
    opt.steps = a.steps;
    if (a.seed_override) opt.seed_base = *a.seed_override;
    opt.mnist_dir = a.mnist_dir;
    run_recipe(a.recipe, a.output, opt);
    std::cout << "recipe " << a.recipe << " complete: " << a.output << '\n';
    return 0;
  }
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed_override) apply_seed_override(cfg, *a.seed_override);
  std::string out = a.output.empty() ? cfg.output : a.output;
  if (out.empty()) throw ConfigError("no output directory: pass --output or set \"output\" in the config");
  const RunResult r = run_experiment(cfg, out, {a.threads});
  for (const auto& p : r.phases)
    std::cout << p.name << ": " << p.steps << " steps, " << p.wall_seconds << " s\n";
  std::cout << "outputs in " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Langevin, HMC and ensemble quasi-Newton sampling of small neural networks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a config file or a named recipe");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)");
  run_cmd->add_option("--recipe", run.recipe, "Named recipe: harmonic-slopes, two-cluster-order, gaussian-eqn, "
                                              "mnist-landscape, mnist-eqn");
  run_cmd->add_option("--output", run.output, "Output directory");
  run_cmd->add_option("--seed-override", run.seed_override, "Replace phase seeds (config) or the seed base (recipe)");
  run_cmd->add_option("--threads", run.threads, "Worker threads")->capture_default_str();
  run_cmd->add_option("--seeds", run.seeds, "Recipe seed/repetition count");
  run_cmd->add_option("--steps", run.steps, "Recipe sampling step count");
  run_cmd->add_option("--mnist-dir", run.mnist_dir, "Directory with the MNIST IDX files");

  std::string agg_points, agg_out;
  auto* agg_cmd = app.add_subcommand("aggregate", "Aggregate recipe point files");
  agg_cmd->add_option("--points", agg_points, "Directory of point JSON files")->required();
  agg_cmd->add_option("--output", agg_out, "Output directory")->required();

  LandscapeRequest land;
  std::string land_config, land_out;
  auto* land_cmd = app.add_subcommand("landscape", "Loss grid along two stored covariance eigenvectors");
  land_cmd->add_option("--config", land_config, "Config naming dataset and architecture")->required();
  land_cmd->add_option("--spectrum-dir", land.spectrum_dir, "Directory with eigenvectors.txt and spectrum.csv")
      ->required();
  land_cmd->add_option("--center-dir", land.center_dir, "Directory with final_state.csv (default: spectrum dir)");
  land_cmd->add_option("--directions", land.directions, "Two zero-based eigenvector indices")
      ->expected(2)
      ->capture_default_str();
  land_cmd->add_option("--half-widths", land.half_widths, "Grid half-widths along each direction")
      ->expected(2)
      ->capture_default_str();
  land_cmd->add_option("--samples", land.samples, "Grid points per axis")->capture_default_str();
  land_cmd->add_option("--trajectory", land.trajectories, "Trajectory CSVs to project (repeatable)");
  land_cmd->add_option("--output", land_out, "Output directory")->required();

  std::string iat_path, iat_out;
  std::vector<std::string> iat_cols = {"loss"};
  auto* iat_cmd = app.add_subcommand("iat", "Integrated autocorrelation times of trajectory columns");
  iat_cmd->add_option("--trajectory", iat_path, "Trajectory CSV")->required();
  iat_cmd->add_option("--observables", iat_cols, "Columns: loss, kinetic_energy, virial")->capture_default_str();
  iat_cmd->add_option("--output", iat_out, "Output directory")->required();

  std::string spec_path, spec_out, spec_mode = "pooled";
  int spec_k = 0;
  auto* spec_cmd = app.add_subcommand("spectrum", "Covariance spectrum of trajectory parameters");
  spec_cmd->add_option("--trajectory", spec_path, "Trajectory CSV with theta columns")->required();
  spec_cmd->add_option("--mode", spec_mode, "pooled or per_walker")
      ->check(CLI::IsMember({"pooled", "per_walker"}))
      ->capture_default_str();
  spec_cmd->add_option("--k", spec_k, "Leading eigenpairs to keep (0 = all)")->capture_default_str();
  spec_cmd->add_option("--output", spec_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return do_run(run);
    if (*agg_cmd) {
      aggregate_points(agg_points, agg_out);
    } else if (*land_cmd) {
      landscape_command(load_config(land_config), land, land_out);
    } else if (*iat_cmd) {
      iat_command(iat_path, iat_cols, iat_out);
    } else if (*spec_cmd) {
      spectrum_command(spec_path, spec_mode == "pooled" ? CovarianceMode::pooled : CovarianceMode::per_walker,
                       spec_k, spec_out);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const AnalysisError& e) {
    std::cerr << "analysis error: " << e.what() << '\n';
    return kExitAnalysis;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}
