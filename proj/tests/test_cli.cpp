#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "gibbsnet/config.hpp"
#include "gibbsnet/errors.hpp"
#include "gibbsnet/runner.hpp"

using namespace gibbsnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("gibbsnet_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json base_config() {
  return json::parse(R"({
    "schema_version": 1,
    "name": "tiny",
    "dataset": {"kind": "two_clusters", "points": 40, "seed": 3},
    "model": {"layers": [2, 1], "loss": "mse", "reduction": "mean"},
    "phases": [
      {"name": "descent", "sampler": "GD", "steps": 50, "step_size": 0.05},
      {"name": "sample", "sampler": "BAOAB", "steps": 4000, "step_size": 0.05,
       "friction": 1, "beta": 10, "seed": 4}
    ],
    "analysis": {"thin": 2, "store_theta": true, "iat": ["loss"], "spectrum": true}
  })");
}

std::vector<std::string> files_with_suffix(const fs::path& dir, const std::string& suffix) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const std::string s = e.path().string();
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("config validation reports every problem at once") {
  json j = base_config();
  j["phases"][1]["step_size"] = -1.0;
  j["phases"][1].erase("seed");
  j["model"]["layers"] = json::array({3, 1});
  try {
    parse_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3 problems") != std::string::npos);
    CHECK(msg.find("step size") != std::string::npos);
    CHECK(msg.find("seed") != std::string::npos);
    CHECK(msg.find("input size") != std::string::npos);
  }
  ExperimentConfig cfg = parse_config(base_config());
  CHECK(validation_errors(cfg).empty());
  cfg.phases[0].steps = 0;
  cfg.phases[1].seed.reset();
  CHECK(validation_errors(cfg).size() == 2);
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("unknown keys and schema versions are rejected") {
  json j = base_config();
  j["phases"][0]["stepsize"] = 0.1;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["schema_version"] = 2;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j.erase("schema_version");
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["phases"][0]["sampler"] = "LEAPFROG";
  CHECK_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
  const ExperimentConfig a = parse_config(base_config());
  const ExperimentConfig b = parse_config(to_json(a));
  CHECK(to_json(a) == to_json(b));
  CHECK(b.phases.size() == 2);
  CHECK(b.phases[1].seed == std::optional<std::uint64_t>(4));
}

TEST_CASE("a run is byte-reproducible and its manifest matches the files") {
  TempDir t("repro");
  const ExperimentConfig cfg = parse_config(base_config());
  run_experiment(cfg, t / "a");
  run_experiment(cfg, t / "b");
  const json man = json::parse(slurp(t / "a/manifest.json"));
  CHECK(man["status"] == "complete");
  REQUIRE(man["files"].size() >= 5);
  for (const auto& f : man["files"]) {
    const std::string rel = f["path"];
    const std::string bytes = slurp(t / ("a/" + rel));
    CHECK(f["size"].get<std::uintmax_t>() == bytes.size());
    CHECK(f["sha256"] == sha256_hex(bytes));
    CHECK(sha256_file(t / ("a/" + rel)) == sha256_hex(bytes));
    CHECK_MESSAGE(bytes == slurp(t / ("b/" + rel)), rel);
  }
  CHECK(files_with_suffix(t.path, ".tmp").empty());
}

TEST_CASE("sha256 matches a known digest") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("seed override changes stochastic output only through the seeds") {
  TempDir t("seed");
  ExperimentConfig a = parse_config(base_config());
  ExperimentConfig b = a;
  apply_seed_override(b, 100);
  CHECK(b.phases[1].seed == std::optional<std::uint64_t>(101));
  run_experiment(a, t / "a");
  run_experiment(b, t / "b");
  run_experiment(b, t / "c");
  CHECK(slurp(t / "a/trajectory_descent.csv") == slurp(t / "b/trajectory_descent.csv"));
  CHECK(slurp(t / "a/trajectory_sample.csv") != slurp(t / "b/trajectory_sample.csv"));
  CHECK(slurp(t / "b/trajectory_sample.csv") == slurp(t / "c/trajectory_sample.csv"));
}

TEST_CASE("walker state carries across phases") {
  TempDir t("carry");
  json one = base_config();
  one["phases"] = json::array({{{"name", "all"}, {"sampler", "GD"}, {"steps", 100}, {"step_size", 0.05}}});
  one["analysis"] = json::object();
  json two = one;
  two["phases"] = json::array({{{"name", "first"}, {"sampler", "GD"}, {"steps", 50}, {"step_size", 0.05}},
                               {{"name", "second"}, {"sampler", "GD"}, {"steps", 50}, {"step_size", 0.05}}});
  run_experiment(parse_config(one), t / "one");
  run_experiment(parse_config(two), t / "two");
  CHECK(slurp(t / "one/final_state.csv") == slurp(t / "two/final_state.csv"));
}

TEST_CASE("an initial parameter file feeds the model") {
  TempDir t("init");
  {
    std::ofstream f(t / "theta.csv");
    f << "0.5, -0.25,\n1.5\n";
  }
  json j = base_config();
  j["model"]["init"] = {{"kind", "file"}, {"path", t / "theta.csv"}};
  const Vector v = initial_parameters(parse_config(j).model);
  REQUIRE(v.size() == 3);
  CHECK(v[1] == -0.25);
  j["model"]["layers"] = json::array({2, 2});
  CHECK_THROWS_AS(initial_parameters(parse_config(j).model), ConfigError);
}

TEST_CASE("divergence is reported and recorded in the manifest") {
  TempDir t("diverge");
  json j = base_config();
  j["dataset"] = {{"kind", "harmonic"}, {"a", 1.0}};
  j["model"] = {{"layers", {1, 1}}, {"loss", "mse"}, {"init", {{"kind", "normal"}, {"scale", 1.0}, {"seed", 2}}}};
  j["phases"] = json::array({{{"name", "blowup"}, {"sampler", "GD"}, {"steps", 10000}, {"step_size", 10.0}}});
  j["analysis"] = json::object();
  CHECK_THROWS_AS(run_experiment(parse_config(j), t / "out"), DivergenceError);
  const json man = json::parse(slurp(t / "out/manifest.json"));
  CHECK(man["status"] == "diverged");
}

TEST_CASE("trajectory CSV reads back") {
  TempDir t("traj");
  run_experiment(parse_config(base_config()), t / "run");
  const TrajectoryTable tab = read_trajectory_csv(t / "run/trajectory_sample.csv");
  REQUIRE(tab.step.size() == 2000);
  CHECK(tab.step[1] - tab.step[0] == 2);
  CHECK(tab.theta.cols() == 3);
  for (double ke : tab.kinetic_energy) CHECK(ke >= 0.0);
  CHECK_THROWS_AS(read_trajectory_csv(t / "run/missing.csv"), std::exception);
}

TEST_CASE("post-processing commands write their tables") {
  TempDir t("post");
  run_experiment(parse_config(base_config()), t / "run");
  iat_command(t / "run/trajectory_sample.csv", {"loss", "virial"}, t / "iat");
  const std::string iat = slurp(t / "iat/iat.csv");
  CHECK(iat.find("loss") != std::string::npos);
  CHECK(iat.find("virial") != std::string::npos);
  spectrum_command(t / "run/trajectory_sample.csv", CovarianceMode::pooled, 2, t / "spec");
  const SpectrumResult s = read_eigenvectors(t / "spec/eigenvectors.txt", t / "spec/spectrum.csv");
  CHECK(s.eigenvectors.rows() == 3);
  CHECK(s.eigenvectors.cols() == 2);
  CHECK(s.eigenvalues[0] >= s.eigenvalues[1]);
  CHECK_THROWS_AS(iat_command(t / "run/trajectory_sample.csv", {"bogus"}, t / "bad"), std::exception);
}

TEST_CASE("aggregation groups points and fits slopes") {
  TempDir t("agg");
  fs::create_directories(t.path / "points");
  int id = 0;
  for (double eps : {0.25, 0.125, 0.0625, 0.03125})
    for (int s = 0; s < 3; ++s) {
      const double err = 0.2 * eps;  // relative error linear in eps
      const json p = {{"group", {{"recipe", "synthetic"}, {"sampler", "SGLD"}}},
                      {"eps", eps},
                      {"seed", s},
                      {"values", {{"virial", 1.0 + err}}},
                      {"exact", {{"virial", 1.0}}}};
      std::ofstream(t / ("points/p" + std::to_string(id++) + ".json")) << p.dump();
    }
  std::ofstream(t / "points/d.json") << json{{"diverged", true}, {"id", "SGLD_e0_s9"}}.dump();
  aggregate_points(t / "points", t / "out");
  const std::string slopes = slurp(t / "out/slopes.csv");
  std::istringstream in(slopes);
  bool eps_row = false, sqrt_row = false;
  for (std::string line; std::getline(in, line);) {
    if (line.find("mean_relative_error,eps,") != std::string::npos) {
      eps_row = true;
      CHECK(std::stod(line.substr(line.rfind(',') + 1)) == doctest::Approx(1.0).epsilon(1e-9));
    }
    if (line.find("mean_relative_error,sqrt_eps,") != std::string::npos) {
      sqrt_row = true;
      CHECK(std::stod(line.substr(line.rfind(',') + 1)) == doctest::Approx(2.0).epsilon(1e-9));
    }
  }
  CHECK(eps_row);
  CHECK(sqrt_row);
  CHECK(slurp(t / "out/diverged.csv").find("SGLD_e0,1") != std::string::npos);
  CHECK_THROWS_AS(aggregate_points(t / "empty_dir_that_is_missing", t / "out2"), std::exception);
}

TEST_CASE("harmonic recipe runs small and resumes without rerunning points") {
  TempDir t("recipe");
  RecipeOptions opt;
  opt.seeds = 1;
  opt.steps = 1000;
  run_recipe("harmonic-slopes", t / "r", opt);
  const auto points = files_with_suffix(t.path / "r/points", ".json");
  CHECK(points.size() == 240);
  const std::string first = slurp(points.front());
  const auto stamp = fs::last_write_time(points.front());
  const std::string agg = slurp(t / "r/aggregate.csv");
  run_recipe("harmonic-slopes", t / "r", opt);
  CHECK(fs::last_write_time(points.front()) == stamp);
  CHECK(slurp(points.front()) == first);
  CHECK(slurp(t / "r/aggregate.csv") == agg);
  CHECK(files_with_suffix(t.path, ".tmp").empty());
  CHECK_THROWS_AS(run_recipe("no-such-recipe", t / "x", opt), ConfigError);
  CHECK_THROWS_AS(run_recipe("mnist-eqn", t / "x", opt), ConfigError);
}
