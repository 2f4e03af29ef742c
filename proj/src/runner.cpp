#include "gibbsnet/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "gibbsnet/errors.hpp"
#include "gibbsnet/experiments.hpp"
#include "gibbsnet/version.hpp"

namespace gibbsnet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- file output ----

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw ConfigError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, target);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trajectory_csv(const std::vector<const Trajectory*>& trajs) {
  std::string out = "step,walker,loss,kinetic_energy,virial";
  Eigen::Index n = 0;
  for (const auto* t : trajs)
    if (t->stores_theta() && !t->thetas().empty()) n = t->thetas().front().size();
  for (Eigen::Index k = 0; k < n; ++k) out += ",theta_" + std::to_string(k);
  out += '\n';
  for (const auto* t : trajs) {
    const auto& recs = t->records();
    for (std::size_t r = 0; r < recs.size(); ++r) {
      out += std::to_string(recs[r].step) + ',' + std::to_string(t->walker_id()) + ',' +
             format_double(recs[r].loss) + ',' + format_double(recs[r].kinetic_energy) + ',' +
             format_double(recs[r].virial);
      if (n) {
        const Vector& th = t->thetas()[r];
        for (Eigen::Index k = 0; k < n; ++k) out += ',' + format_double(th[k]);
      }
      out += '\n';
    }
  }
  return out;
}

std::string spectrum_csv(const SpectrumResult& s) {
  std::string out = "index,eigenvalue\n";
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i)
    out += std::to_string(i) + ',' + format_double(s.eigenvalues[i]) + '\n';
  return out;
}

std::string eigenvector_matrix(const SpectrumResult& s) {
  std::string out = "# " + std::to_string(s.eigenvectors.rows()) + ' ' +
                    std::to_string(s.eigenvectors.cols()) + '\n';
  for (Eigen::Index i = 0; i < s.eigenvectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.eigenvectors.cols(); ++j) {
      if (j) out += ',';
      out += format_double(s.eigenvectors(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string landscape_csv(const LandscapeGrid& g) {
  std::string out = "c0,c1,loss,log_shifted_loss\n";
  for (Eigen::Index i = 0; i < g.c0.size(); ++i)
    for (Eigen::Index j = 0; j < g.c1.size(); ++j)
      out += format_double(g.c0[i]) + ',' + format_double(g.c1[j]) + ',' +
             format_double(g.loss(i, j)) + ',' + format_double(g.log_shifted(i, j)) + '\n';
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\r' || e[-1] == '\t')) --e;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw AnalysisError(where + ": bad number '" + s + "'");
  return v;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input file '" + path + "'");
  return in;
}

}  // namespace

TrajectoryTable read_trajectory_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw AnalysisError(path + ": empty trajectory file");
  const auto header = split(line, ',');
  const std::vector<std::string> fixed = {"step", "walker", "loss", "kinetic_energy", "virial"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw AnalysisError(path + ": not a trajectory CSV (header " + line + ")");
  const std::size_t n = header.size() - fixed.size();
  TrajectoryTable t;
  std::vector<std::vector<double>> thetas;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw AnalysisError(where + ": wrong column count");
    t.step.push_back(std::uint64_t(parse_number(cells[0], where)));
    t.walker.push_back(int(parse_number(cells[1], where)));
    t.loss.push_back(parse_number(cells[2], where));
    t.kinetic_energy.push_back(parse_number(cells[3], where));
    t.virial.push_back(parse_number(cells[4], where));
    if (n) {
      std::vector<double> th(n);
      for (std::size_t k = 0; k < n; ++k) th[k] = parse_number(cells[5 + k], where);
      thetas.push_back(std::move(th));
    }
  }
  t.theta.resize(Eigen::Index(thetas.size()), Eigen::Index(n));
  for (std::size_t r = 0; r < thetas.size(); ++r)
    for (std::size_t k = 0; k < n; ++k) t.theta(Eigen::Index(r), Eigen::Index(k)) = thetas[r][k];
  return t;
}

SpectrumResult read_eigenvectors(const std::string& matrix_path, const std::string& spectrum_path) {
  SpectrumResult s;
  {
    auto in = open_input(matrix_path);
    std::string line;
    std::getline(in, line);
    long n = 0, k = 0;
    if (std::sscanf(line.c_str(), "# %ld %ld", &n, &k) != 2 || n <= 0 || k <= 0)
      throw AnalysisError(matrix_path + ": missing '# N k' header");
    s.eigenvectors.resize(n, k);
    for (long i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw AnalysisError(matrix_path + ": truncated matrix");
      const auto cells = split(line, ',');
      if (long(cells.size()) != k) throw AnalysisError(matrix_path + ": wrong row length");
      for (long j = 0; j < k; ++j) s.eigenvectors(i, j) = parse_number(cells[std::size_t(j)], matrix_path);
    }
  }
  auto in = open_input(spectrum_path);
  std::string line;
  std::getline(in, line);
  std::vector<double> ev;
  while (std::getline(in, line))
    if (!line.empty()) ev.push_back(parse_number(split(line, ',').at(1), spectrum_path));
  s.eigenvalues = Eigen::Map<Vector>(ev.data(), Eigen::Index(ev.size()));
  return s;
}

// ---- manifest ----

void Manifest::add_file(const std::string& rel, const std::string& content) {
  write_file_atomic((fs::path(outdir_) / rel).string(), content);
  for (auto& f : files_)
    if (f.path == rel) {
      f.size = content.size();
      f.sha256 = sha256_hex(content);
      return;
    }
  files_.push_back({rel, content.size(), sha256_hex(content)});
}

void Manifest::write(const std::string& status) const {
  json j = extra_;
  j["status"] = status;
  j["version"] = kVersion;
  json files = json::array();
  for (const auto& f : files_) files.push_back({{"path", f.path}, {"size", f.size}, {"sha256", f.sha256}});
  j["files"] = files;
  write_file_atomic((fs::path(outdir_) / "manifest.json").string(), j.dump(2) + "\n");
}

// ---- single experiment ----

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first
// exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::size_t(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::vector<double> observable_series(const Trajectory& t, const std::string& name) {
  if (name == "loss") return t.losses();
  if (name == "kinetic_energy") return t.kinetic_energies();
  return t.virials();
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& outdir,
                         const RunOptions& opt) {
  validate_config(cfg);
  fs::create_directories(outdir);
  Manifest manifest(outdir);
  const json cfg_json = to_json(cfg);
  manifest.set("name", cfg.name);
  manifest.set("config", cfg_json);
  manifest.set("config_sha256", sha256_hex(cfg_json.dump()));
  json seeds = json::array();
  for (const auto& p : cfg.phases) seeds.push_back(p.seed ? json(*p.seed) : json(nullptr));
  manifest.set("seeds", seeds);
  manifest.set("phases", json::array());

  const Architecture& arch = cfg.model.arch;
  const auto data = build_dataset(cfg.dataset);
  const Vector theta0 = initial_parameters(cfg.model);
  const AnalysisSpec& an = cfg.analysis;

  RunResult result;
  std::vector<WalkerState> walkers;
  walkers.emplace_back(theta0, 0);
  // Trajectories of the most recent recorded phase feed the spectrum and
  // landscape analyses.
  std::vector<Trajectory> last_recorded;
  json iat_rows = json::array();
  std::string iat_table = "phase,walker,observable,tau,mean,sigma,window,reductions\n";

  for (std::size_t pi = 0; pi < cfg.phases.size(); ++pi) {
    const PhaseSpec& ph = cfg.phases[pi];
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = ph.seed.value_or(0);
    if (std::size_t(ph.walkers) != walkers.size()) {
      const WalkerState base = walkers.front();
      walkers.clear();
      for (int i = 0; i < ph.walkers; ++i) {
        walkers.emplace_back(base.theta, seed, std::uint64_t(i));
        walkers.back().momentum = base.momentum;
        walkers.back().step_count = base.step_count;
      }
    }
    for (std::size_t i = 0; i < walkers.size(); ++i) {
      walkers[i].rng = Rng(seed, i);
      walkers[i].invalidate_gradient();
      walkers[i].bb_has_prev = false;
      walkers[i].hmc_proposals = walkers[i].hmc_accepted = 0;
    }
    std::vector<std::unique_ptr<GradientSource>> sources;
    for (std::size_t i = 0; i < walkers.size(); ++i)
      sources.push_back(std::make_unique<ModelObjective>(arch, data, cfg.model.reduction,
                                                         ph.batch_size, seed, i));
    const SamplerConfig sc = sampler_config(ph, arch);
    std::vector<Trajectory> trajs;
    for (std::size_t i = 0; i < walkers.size(); ++i)
      trajs.emplace_back(an.thin, int(i), an.store_theta);
    std::vector<Observer> observers;
    for (std::size_t i = 0; i < walkers.size(); ++i)
      observers.emplace_back(ph.record ? &trajs[i] : nullptr);

    std::string precond_dump;
    std::string failure;
    try {
      if (ph.ensemble) {
        EnsembleConfig ec;
        ec.sampler = sc;
        ec.eta = ph.eta;
        ec.rebuild_period = ph.rebuild_period;
        ec.kick_form = ph.kick_form;
        ec.sampler.validate(arch.param_count());
        EnsembleState es(std::vector<Vector>(walkers.size(), Vector()), seed);
        es.walkers = walkers;
        std::ostringstream dump;
        for (std::uint64_t k = 0; k < ph.steps; ++k) {
          const bool rebuilt = advance_eqn(es, ec, sources);
          if (rebuilt && ph.dump_preconditioners)
            dump_preconditioner_spectra(es, es.walkers.front().step_count - 1, dump);
          for (std::size_t i = 0; i < es.size(); ++i) observers[i].observe(es.walkers[i], *sources[i]);
        }
        walkers = es.walkers;
        precond_dump = dump.str();
      } else {
        const Sampler sampler(sc, arch.param_count());
        parallel_for(walkers.size(), opt.threads, [&](std::size_t i) {
          for (std::uint64_t k = 0; k < ph.steps; ++k) {
            sampler.step(walkers[i], *sources[i]);
            observers[i].observe(walkers[i], *sources[i]);
          }
        });
      }
    } catch (const DivergenceError& e) {
      failure = e.what();
    }

    PhaseSummary sum;
    sum.name = ph.name;
    sum.steps = ph.steps;
    for (std::size_t i = 0; i < walkers.size(); ++i) {
      sum.mean_loss.push_back(observers[i].mean_loss());
      sum.mean_kinetic_energy.push_back(observers[i].mean_kinetic_energy());
      sum.mean_virial.push_back(observers[i].mean_virial());
      sum.acceptance_rate.push_back(walkers[i].hmc_proposals
                                        ? double(walkers[i].hmc_accepted) / double(walkers[i].hmc_proposals)
                                        : 1.0);
      sum.gradient_evaluations += sources[i]->evaluations();
    }
    if (ph.record) {
      std::vector<const Trajectory*> ptrs;
      for (const auto& t : trajs) ptrs.push_back(&t);
      manifest.add_file("trajectory_" + ph.name + ".csv", trajectory_csv(ptrs));
    }
    if (!precond_dump.empty()) {
      std::string head = "step,walker";
      for (Eigen::Index k = 0; k < arch.param_count(); ++k) head += ",eig_" + std::to_string(k);
      manifest.add_file("preconditioners_" + ph.name + ".csv", head + "\n" + precond_dump);
    }
    sum.wall_seconds = seconds_since(t0);
    result.phases.push_back(sum);
    manifest.extra()["phases"].push_back({{"name", ph.name},
                                          {"steps", ph.steps},
                                          {"seed", ph.seed ? json(*ph.seed) : json(nullptr)},
                                          {"wall_seconds", sum.wall_seconds},
                                          {"gradient_evaluations", sum.gradient_evaluations},
                                          {"mean_loss", sum.mean_loss},
                                          {"mean_kinetic_energy", sum.mean_kinetic_energy},
                                          {"mean_virial", sum.mean_virial},
                                          {"acceptance_rate", sum.acceptance_rate}});
    if (!failure.empty()) {
      result.status = "diverged";
      manifest.set("error", failure);
      manifest.set("failed_phase", ph.name);
      manifest.write("diverged");
      throw DivergenceError(failure + " (phase '" + ph.name + "'; partial outputs in " + outdir + ")");
    }

    // Deterministic phases have no autocorrelation time worth reporting.
    if (ph.record && phase_is_stochastic(ph)) {
      for (const auto& obs_name : an.iat)
        for (const auto& t : trajs) {
          IatOptions io;
          io.sampling_interval = an.thin;
          IatResult r;
          try {
            r = integrated_autocorrelation_time(observable_series(t, obs_name), io);
          } catch (const AnalysisError& e) {
            std::cerr << "warning: phase '" << ph.name << "' walker " << t.walker_id() << ' '
                      << obs_name << ": " << e.what() << '\n';
            iat_table += ph.name + ',' + std::to_string(t.walker_id()) + ',' + obs_name + ",,,,,\n";
            continue;
          }
          iat_table += ph.name + ',' + std::to_string(t.walker_id()) + ',' + obs_name + ',' +
                       format_double(r.tau) + ',' + format_double(r.mean) + ',' +
                       format_double(r.sigma) + ',' + std::to_string(r.window) + ',' +
                       std::to_string(r.reductions) + '\n';
        }
      last_recorded = std::move(trajs);
    }
  }

  for (const auto& w : walkers) result.final_theta.push_back(w.theta);
  {
    std::string fs_csv = "walker";
    for (Eigen::Index k = 0; k < arch.param_count(); ++k) fs_csv += ",theta_" + std::to_string(k);
    fs_csv += '\n';
    for (std::size_t i = 0; i < walkers.size(); ++i) {
      fs_csv += std::to_string(i);
      for (Eigen::Index k = 0; k < arch.param_count(); ++k) fs_csv += ',' + format_double(walkers[i].theta[k]);
      fs_csv += '\n';
    }
    manifest.add_file("final_state.csv", fs_csv);
  }
  if (!an.iat.empty()) manifest.add_file("iat.csv", iat_table);

  if (an.spectrum || an.landscape) {
    if (last_recorded.empty()) throw ConfigError("spectrum/landscape analysis needs a recorded phase");
    std::vector<const Trajectory*> ptrs;
    for (const auto& t : last_recorded) ptrs.push_back(&t);
    Eigen::Index k = an.spectrum_k;
    if (an.landscape) {
      const auto& dirs = an.landscape->directions;
      k = std::max<Eigen::Index>(k, *std::max_element(dirs.begin(), dirs.end()) + 1);
    }
    const SpectrumResult spec = trajectory_covariance(ptrs, CovarianceMode::pooled, k).front();
    manifest.add_file("spectrum.csv", spectrum_csv(spec));
    manifest.add_file("eigenvectors.txt", eigenvector_matrix(spec));
    if (an.landscape) {
      const auto& ls = *an.landscape;
      for (int d : ls.directions)
        if (d >= spec.eigenvectors.cols())
          throw AnalysisError("landscape direction " + std::to_string(d) + " exceeds the " +
                              std::to_string(spec.eigenvectors.cols()) + " available eigenvectors");
      ModelObjective full(arch, data, cfg.model.reduction);
      const Vector& center = walkers.front().theta;
      const Vector v0 = spec.eigenvectors.col(ls.directions[0]);
      const Vector v1 = spec.eigenvectors.col(ls.directions[1]);
      std::vector<double> extra;
      if (ls.project_trajectory) {
        const auto pts = project_trajectory(last_recorded.front().thetas(), center, v0, v1, full);
        std::string csv = "c0,c1,loss\n";
        for (const auto& p : pts) {
          extra.push_back(p.loss);
          csv += format_double(p.c0) + ',' + format_double(p.c1) + ',' + format_double(p.loss) + '\n';
        }
        manifest.add_file("projection.csv", csv);
      }
      const LandscapeGrid g = landscape_grid(full, center, v0, v1, ls.half_widths[0],
                                             ls.half_widths[1], ls.samples, extra);
      manifest.add_file("landscape.csv", landscape_csv(g));
    }
  }
  manifest.write("complete");
  return result;
}

// ---- recipes ----

namespace {

struct Point {
  std::string id;  // file stem, unique within the recipe
  std::function<json()> run;
};

std::string fmt_key(double v) {
  std::string s = format_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  std::replace(s.begin(), s.end(), '-', 'm');
  return s;
}

json sweep_point(const json& group, double eps, std::uint64_t seed, const json& values,
                 const json& exact) {
  return {{"group", group}, {"eps", eps}, {"seed", seed}, {"values", values}, {"exact", exact}};
}

std::vector<Point> harmonic_points(const RecipeOptions& opt) {
  std::vector<Point> pts;
  const int seeds = opt.seeds.value_or(20);
  const std::uint64_t steps = opt.steps.value_or(1000000);
  const double beta = 10.0;
  const std::vector<double> eps = halving_grid(0.25, 5);
  for (double a : {0.01, 1.0, 4.0})
    for (SamplerKind kind : {SamplerKind::BAOAB, SamplerKind::GLA1, SamplerKind::GLA2, SamplerKind::SGLD})
      for (double gamma : {0.01, 0.1, 1.0, 10.0, 100.0}) {
        if (kind == SamplerKind::SGLD && gamma != 0.01) continue;  // no friction parameter
        json group = {{"recipe", "harmonic-slopes"}, {"sampler", to_string(kind)}, {"a", a}};
        if (kind != SamplerKind::SGLD) group["gamma"] = gamma;
        for (std::size_t e = 0; e < eps.size(); ++e)
          for (int s = 0; s < seeds; ++s) {
            const std::uint64_t seed = opt.seed_base + 1000003ull * e + std::uint64_t(s);
            std::string id = to_string(kind) + "_a" + fmt_key(a) +
                             (kind == SamplerKind::SGLD ? "" : "_g" + fmt_key(gamma)) + "_e" +
                             std::to_string(e) + "_s" + std::to_string(seed);
            pts.push_back({id, [=] {
                             const HarmonicProblem prob = make_harmonic_problem(a);
                             auto src = prob.objective();
                             SamplerConfig cfg;
                             cfg.kind = kind;
                             cfg.step_size = eps[e];
                             cfg.friction = gamma;
                             cfg.inverse_temperature = beta;
                             cfg.mobile_mask = prob.mask;
                             const RunAverages r = run_and_average(cfg, *src, Vector::Zero(2), steps, seed);
                             json values = {{"virial", r.virial}};
                             json exact = {{"virial", 1.0 / beta}};
                             if (kind != SamplerKind::SGLD) {
                               values["kinetic_energy"] = r.kinetic_energy;
                               exact["kinetic_energy"] = 0.5 / beta;
                             }
                             return sweep_point(group, eps[e], seed, values, exact);
                           }});
          }
      }
  return pts;
}

std::vector<Point> two_cluster_points(const RecipeOptions& opt) {
  std::vector<Point> pts;
  const int seeds = opt.seeds.value_or(100);
  const std::uint64_t steps = opt.steps.value_or(1000000);
  auto prob = std::make_shared<TwoClusterProblem>(make_two_cluster_problem());
  for (SamplerKind kind : {SamplerKind::GLA1, SamplerKind::GLA2, SamplerKind::BAOAB, SamplerKind::SGLD}) {
    const std::vector<double> eps = halving_grid(two_cluster_eps_max(*prob, kind), 5);
    const json group = {{"recipe", "two-cluster-order"}, {"sampler", to_string(kind)}};
    for (std::size_t e = 0; e < eps.size(); ++e)
      for (int s = 0; s < seeds; ++s) {
        const std::uint64_t seed = opt.seed_base + 1000003ull * e + std::uint64_t(s);
        pts.push_back({to_string(kind) + "_e" + std::to_string(e) + "_s" + std::to_string(seed), [=] {
                         auto src = prob->objective();
                         SamplerConfig cfg;
                         cfg.kind = kind;
                         cfg.step_size = eps[e];
                         cfg.friction = 10.0;
                         cfg.inverse_temperature = 10.0;
                         const RunAverages r = run_and_average(cfg, *src, prob->theta_start, steps, seed);
                         return sweep_point(group, eps[e], seed, {{"virial", r.virial}},
                                            {{"virial", double(prob->arch.param_count()) / 10.0}});
                       }});
      }
  }
  return pts;
}

std::vector<Point> gaussian_eqn_points(const RecipeOptions& opt) {
  std::vector<Point> pts;
  const int reps = opt.seeds.value_or(5);
  const std::uint64_t steps = opt.steps.value_or(50000);
  for (int n = 2; n <= 128; n *= 2)
    for (int l : {1, 2, 4, 8, 16})
      for (int rep = 0; rep < reps; ++rep) {
        const std::uint64_t seed = opt.seed_base + std::uint64_t(rep);
        pts.push_back({"n" + std::to_string(n) + "_L" + std::to_string(l) + "_r" + std::to_string(rep), [=] {
                         EqnStudySpec es;
                         es.dim = n;
                         es.walkers = l;
                         es.steps = steps;
                         es.seed = seed;
                         es.model_seed = seed;
                         const EqnStudyResult r = gaussian_eqn_study(es);
                         json values = {{"iat_max", r.iat.maxCoeff()}};
                         for (Eigen::Index j = 0; j < r.iat.size(); ++j)
                           values["iat_" + std::to_string(j)] = r.iat[j];
                         return json{{"group", {{"recipe", "gaussian-eqn"}, {"n", n}, {"walkers", l}}},
                                     {"seed", seed},
                                     {"values", values}};
                       }});
      }
  return pts;
}

PhaseSpec sgd_phase(const char* name, std::uint64_t steps, double lr, Eigen::Index batch,
                    std::uint64_t seed) {
  PhaseSpec p;
  p.name = name;
  p.kind = batch ? SamplerKind::SGD : SamplerKind::GD;
  p.steps = steps;
  p.step_size = lr;
  p.batch_size = batch;
  if (batch) p.seed = seed;
  return p;
}

ExperimentConfig mnist_base(const RecipeOptions& opt, const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.dataset.kind = "mnist";
  c.dataset.path = opt.mnist_dir;
  c.model.arch.layer_sizes = {784, 10};
  c.model.arch.loss = LossKind::softmax_cross_entropy;
  c.model.init = {"normal", 0.01, opt.seed_base, ""};
  return c;
}

// Three-leg optimization whose end point is the landscape origin.
ExperimentConfig mnist_optimization_config(const RecipeOptions& opt) {
  ExperimentConfig c = mnist_base(opt, "mnist-optimization");
  c.phases.push_back(sgd_phase("leg1", 3000, 0.5, 550, opt.seed_base));
  c.phases.push_back(sgd_phase("leg2", 3000, 0.05, 5500, opt.seed_base + 1));
  c.phases.push_back(sgd_phase("leg3", 3000, 0.01, 0, opt.seed_base + 2));
  c.analysis.thin = 50;
  c.analysis.store_theta = true;
  return c;
}

// Long sampling run whose covariance supplies the landscape directions.
ExperimentConfig mnist_sampling_config(const RecipeOptions& opt) {
  ExperimentConfig c = mnist_base(opt, "mnist-sampling");
  PhaseSpec eq = sgd_phase("equilibrate", 5000, 0.5, 550, opt.seed_base);
  eq.record = false;
  c.phases.push_back(eq);
  PhaseSpec s;
  s.name = "sample";
  s.kind = SamplerKind::BAOAB;
  s.steps = opt.steps.value_or(1000000);
  s.step_size = 0.125;
  s.friction = 10.0;
  s.beta = 10.0;
  s.batch_size = 550;
  s.seed = opt.seed_base + 1;
  c.phases.push_back(s);
  c.analysis.thin = 100;
  c.analysis.store_theta = true;
  c.analysis.spectrum = true;
  c.analysis.spectrum_k = 64;
  return c;
}

ExperimentConfig mnist_eqn_config(const RecipeOptions& opt, double eta) {
  ExperimentConfig c = mnist_base(opt, "mnist-eqn-eta" + fmt_key(eta));
  c.dataset.digits = std::make_pair(7, 9);
  c.model.arch.layer_sizes = {784, 2};
  PhaseSpec eq = sgd_phase("equilibrate", 5000, 0.1, 550, opt.seed_base);
  eq.record = false;
  c.phases.push_back(eq);
  PhaseSpec s;
  s.name = "sample";
  s.kind = SamplerKind::BAOAB;
  s.ensemble = true;
  s.walkers = 8;
  s.eta = eta;
  s.rebuild_period = 10000;
  s.steps = opt.steps.value_or(1000000);
  s.step_size = 0.125;
  s.friction = 10.0;
  s.beta = 10.0;
  s.batch_size = 550;
  s.seed = opt.seed_base + 1;
  s.freeze.bias_layers = {-1};
  c.phases.push_back(s);
  c.analysis.thin = 100;
  c.analysis.store_theta = true;
  return c;
}

// IAT of each walker's trajectory projected on the top eigenvectors of its
// own covariance, averaged over walkers; one row per direction.
std::string projected_iat_table(const std::string& trajectory_path, int directions) {
  const TrajectoryTable t = read_trajectory_csv(trajectory_path);
  std::map<int, std::vector<Eigen::Index>> rows;
  for (std::size_t r = 0; r < t.step.size(); ++r) rows[t.walker[r]].push_back(Eigen::Index(r));
  Vector tau = Vector::Zero(directions);
  for (const auto& [w, idx] : rows) {
    const Matrix snaps = t.theta(idx, Eigen::all);
    const SpectrumResult s = snapshot_spectrum(snaps, directions);
    IatOptions io;
    io.sampling_interval = double(t.step[std::size_t(idx[1])] - t.step[std::size_t(idx[0])]);
    for (int j = 0; j < directions && j < s.eigenvectors.cols(); ++j) {
      const Vector proj = snaps * s.eigenvectors.col(j);
      tau[j] += integrated_autocorrelation_time(std::vector<double>(proj.data(), proj.data() + proj.size()), io).tau /
                double(rows.size());
    }
  }
  std::string out = "direction,tau\n";
  for (int j = 0; j < directions; ++j) out += std::to_string(j) + ',' + format_double(tau[j]) + '\n';
  return out;
}

void run_points(const std::vector<Point>& pts, const std::string& points_dir, int threads) {
  fs::create_directories(points_dir);
  std::vector<const Point*> todo;
  for (const auto& p : pts)
    if (!fs::exists(fs::path(points_dir) / (p.id + ".json"))) todo.push_back(&p);
  std::cerr << "recipe: " << pts.size() - todo.size() << " of " << pts.size()
            << " points already done, running " << todo.size() << '\n';
  std::mutex mu;
  std::size_t done = 0;
  parallel_for(todo.size(), threads, [&](std::size_t i) {
    json res;
    try {
      res = todo[i]->run();
    } catch (const DivergenceError& e) {
      res = {{"diverged", true}, {"error", e.what()}};
    }
    res["id"] = todo[i]->id;
    write_file_atomic((fs::path(points_dir) / (todo[i]->id + ".json")).string(), res.dump() + "\n");
    std::lock_guard<std::mutex> lock(mu);
    if (++done % 100 == 0) std::cerr << "recipe: " << done << '/' << todo.size() << '\n';
  });
}

}  // namespace

std::vector<std::string> recipe_names() {
  return {"harmonic-slopes", "two-cluster-order", "gaussian-eqn", "mnist-landscape", "mnist-eqn"};
}

void run_recipe(const std::string& name, const std::string& outdir, const RecipeOptions& opt) {
  const auto names = recipe_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string msg = "unknown recipe '" + name + "' (available:";
    for (const auto& n : names) msg += ' ' + n;
    throw ConfigError(msg + ")");
  }
  if (opt.seeds && *opt.seeds < 1) throw ConfigError("--seeds must be >= 1");
  if (opt.steps && *opt.steps < 1) throw ConfigError("--steps must be >= 1");
  fs::create_directories(outdir);
  if (name == "mnist-landscape" || name == "mnist-eqn") {
    if (opt.mnist_dir.empty()) throw ConfigError("recipe '" + name + "' needs --mnist-dir");
    const fs::path out(outdir);
    if (name == "mnist-landscape") {
      const ExperimentConfig sampling = mnist_sampling_config(opt);
      const ExperimentConfig optimization = mnist_optimization_config(opt);
      run_experiment(sampling, (out / "sampling").string(), {opt.threads});
      run_experiment(optimization, (out / "optimization").string(), {opt.threads});
      LandscapeRequest req;
      req.spectrum_dir = (out / "sampling").string();
      req.center_dir = (out / "optimization").string();
      for (const char* leg : {"leg1", "leg2", "leg3"})
        req.trajectories.push_back((out / "optimization" / (std::string("trajectory_") + leg + ".csv")).string());
      landscape_command(optimization, req, (out / "landscape").string());
    } else {
      for (double eta : {0.0, 1e4}) {
        const ExperimentConfig c = mnist_eqn_config(opt, eta);
        const fs::path dir = out / c.name;
        run_experiment(c, dir.string(), {opt.threads});
        write_file_atomic((dir / "iat_projections.csv").string(),
                          projected_iat_table((dir / "trajectory_sample.csv").string(), 20));
      }
    }
    return;
  }
  std::vector<Point> pts;
  if (name == "harmonic-slopes") pts = harmonic_points(opt);
  if (name == "two-cluster-order") pts = two_cluster_points(opt);
  if (name == "gaussian-eqn") pts = gaussian_eqn_points(opt);
  const std::string points_dir = (fs::path(outdir) / "points").string();
  run_points(pts, points_dir, opt.threads);
  aggregate_points(points_dir, outdir);
}

// ---- aggregation ----

namespace {

std::string group_label(const json& g) {
  std::string s;
  for (const auto& [k, v] : g.items()) {
    if (!s.empty()) s += ';';
    s += k + '=' + (v.is_string() ? v.get<std::string>() : v.dump());
  }
  return s;
}

struct Cell {
  std::vector<double> values;
  std::optional<double> exact;
};

}  // namespace

void aggregate_points(const std::string& points_dir, const std::string& outdir) {
  if (!fs::is_directory(points_dir)) throw ConfigError("no points directory '" + points_dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(points_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw AnalysisError("no point results in '" + points_dir + "'");

  // group label -> eps (NaN when absent) -> observable -> cell
  std::map<std::string, std::map<double, std::map<std::string, Cell>>> table;
  std::map<std::string, int> diverged;
  for (const auto& f : files) {
    json p;
    try {
      std::ifstream in(f);
      in >> p;
    } catch (const json::exception& e) {
      throw AnalysisError("point file " + f.string() + " is not valid JSON: " + e.what());
    }
    if (p.value("diverged", false)) {
      const std::string id = p.value("id", f.stem().string());
      ++diverged[id.substr(0, id.rfind("_s"))];
      continue;
    }
    if (!p.contains("group") || !p.contains("values"))
      throw AnalysisError("point file " + f.string() + " lacks group or values");
    const std::string g = group_label(p["group"]);
    const double eps = p.contains("eps") ? p["eps"].get<double>() : std::nan("");
    for (const auto& [obs, v] : p["values"].items()) {
      Cell& c = table[g][eps][obs];
      c.values.push_back(v.get<double>());
      if (p.contains("exact") && p["exact"].contains(obs)) c.exact = p["exact"][obs].get<double>();
    }
  }

  std::string agg = "group,eps,observable,count,mean,std,exact,mean_relative_error,rms_relative_error\n";
  std::string slopes = "group,observable,metric,abscissa,slope\n";
  for (const auto& [g, by_eps] : table) {
    std::map<std::string, std::vector<std::array<double, 3>>> curves;  // eps, mean err, rms err
    for (const auto& [eps, by_obs] : by_eps)
      for (const auto& [obs, c] : by_obs) {
        const double n = double(c.values.size());
        double m = 0.0;
        for (double v : c.values) m += v;
        m /= n;
        double var = 0.0;
        for (double v : c.values) var += (v - m) * (v - m);
        const double sd = c.values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        std::string row = '"' + g + "\"," + (std::isnan(eps) ? "" : format_double(eps)) + ',' + obs + ',' +
                          std::to_string(c.values.size()) + ',' + format_double(m) + ',' + format_double(sd);
        if (c.exact) {
          const double ex = *c.exact;
          double ms = 0.0;
          for (double v : c.values) ms += (v - ex) * (v - ex);
          const double mre = std::abs(m - ex) / std::abs(ex);
          const double rre = std::sqrt(ms / n) / std::abs(ex);
          row += ',' + format_double(ex) + ',' + format_double(mre) + ',' + format_double(rre);
          if (!std::isnan(eps)) curves[obs].push_back({eps, mre, rre});
        } else {
          row += ",,,";
        }
        agg += row + '\n';
      }
    const bool sgld = g.find("sampler=SGLD") != std::string::npos;
    for (const auto& [obs, pts] : curves) {
      if (pts.size() < 3) continue;
      for (int metric = 1; metric <= 2; ++metric) {
        std::vector<double> e, err;
        for (const auto& p : pts) {
          e.push_back(p[0]);
          err.push_back(p[std::size_t(metric)]);
        }
        const char* mname = metric == 1 ? "mean_relative_error" : "rms_relative_error";
        try {
          const double s = fit_slope(e, err);
          slopes += '"' + g + "\"," + obs + ',' + mname + ",eps," + format_double(s) + '\n';
          // Plotting against sqrt(eps) doubles every log-slope.
          if (sgld) slopes += '"' + g + "\"," + obs + ',' + mname + ",sqrt_eps," + format_double(2.0 * s) + '\n';
        } catch (const AnalysisError&) {
          slopes += '"' + g + "\"," + obs + ',' + mname + ",eps,\n";
        }
      }
    }
  }
  write_file_atomic((fs::path(outdir) / "aggregate.csv").string(), agg);
  write_file_atomic((fs::path(outdir) / "slopes.csv").string(), slopes);
  if (!diverged.empty()) {
    std::string d = "point_group,diverged_runs\n";
    for (const auto& [k, n] : diverged) d += k + ',' + std::to_string(n) + '\n';
    write_file_atomic((fs::path(outdir) / "diverged.csv").string(), d);
  }
}

// ---- post-processing ----

void iat_command(const std::string& trajectory_path, const std::vector<std::string>& columns,
                 const std::string& outdir) {
  const TrajectoryTable t = read_trajectory_csv(trajectory_path);
  std::map<int, std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < t.step.size(); ++r) rows[t.walker[r]].push_back(r);
  std::string out = "walker,observable,tau,mean,sigma,window,reductions\n";
  for (const auto& [w, idx] : rows) {
    if (idx.size() < 2) throw AnalysisError("walker " + std::to_string(w) + " has too few records");
    IatOptions io;
    io.sampling_interval = double(t.step[idx[1]] - t.step[idx[0]]);
    for (const auto& col : columns) {
      const std::vector<double>* src = nullptr;
      if (col == "loss") src = &t.loss;
      else if (col == "kinetic_energy") src = &t.kinetic_energy;
      else if (col == "virial") src = &t.virial;
      std::vector<double> x;
      if (src) {
        for (std::size_t r : idx) x.push_back((*src)[r]);
      } else if (col.rfind("theta_", 0) == 0) {
        const long k = std::stol(col.substr(6));
        if (k < 0 || k >= t.theta.cols()) throw ConfigError("no column '" + col + "'");
        for (std::size_t r : idx) x.push_back(t.theta(Eigen::Index(r), k));
      } else {
        throw ConfigError("unknown column '" + col + "'");
      }
      const IatResult r = integrated_autocorrelation_time(x, io);
      out += std::to_string(w) + ',' + col + ',' + format_double(r.tau) + ',' + format_double(r.mean) +
             ',' + format_double(r.sigma) + ',' + std::to_string(r.window) + ',' +
             std::to_string(r.reductions) + '\n';
    }
  }
  write_file_atomic((fs::path(outdir) / "iat.csv").string(), out);
}

void spectrum_command(const std::string& trajectory_path, CovarianceMode mode, int k,
                      const std::string& outdir) {
  const TrajectoryTable t = read_trajectory_csv(trajectory_path);
  if (t.theta.cols() == 0) throw AnalysisError(trajectory_path + " has no theta columns");
  std::map<int, std::vector<Eigen::Index>> rows;
  for (std::size_t r = 0; r < t.step.size(); ++r) rows[t.walker[r]].push_back(Eigen::Index(r));
  std::vector<std::pair<std::string, Matrix>> sets;
  if (mode == CovarianceMode::pooled) {
    sets.emplace_back("", t.theta);
  } else {
    for (const auto& [w, idx] : rows) sets.emplace_back("_walker" + std::to_string(w), t.theta(idx, Eigen::all));
  }
  for (const auto& [suffix, snaps] : sets) {
    const SpectrumResult s = snapshot_spectrum(snaps, k);
    write_file_atomic((fs::path(outdir) / ("spectrum" + suffix + ".csv")).string(), spectrum_csv(s));
    write_file_atomic((fs::path(outdir) / ("eigenvectors" + suffix + ".txt")).string(), eigenvector_matrix(s));
  }
}

void landscape_command(const ExperimentConfig& cfg, const LandscapeRequest& req,
                       const std::string& outdir) {
  if (req.directions.size() != 2 || req.half_widths.size() != 2)
    throw ConfigError("landscape needs two directions and two half-widths");
  const fs::path sdir(req.spectrum_dir);
  const fs::path cdir(req.center_dir.empty() ? req.spectrum_dir : req.center_dir);
  const SpectrumResult spec =
      read_eigenvectors((sdir / "eigenvectors.txt").string(), (sdir / "spectrum.csv").string());
  for (int d : req.directions)
    if (d < 0 || d >= spec.eigenvectors.cols())
      throw ConfigError("direction " + std::to_string(d) + " not among the " +
                        std::to_string(spec.eigenvectors.cols()) + " stored eigenvectors");
  Vector center;
  {
    auto in = open_input((cdir / "final_state.csv").string());
    std::string line;
    std::getline(in, line);
    if (!std::getline(in, line)) throw AnalysisError("final_state.csv has no walker rows");
    const auto cells = split(line, ',');
    center.resize(Eigen::Index(cells.size()) - 1);
    for (std::size_t i = 1; i < cells.size(); ++i)
      center[Eigen::Index(i) - 1] = parse_number(cells[i], "final_state.csv");
  }
  const auto data = build_dataset(cfg.dataset);
  ModelObjective full(cfg.model.arch, data, cfg.model.reduction);
  if (center.size() != full.dim() || spec.eigenvectors.rows() != full.dim())
    throw ConfigError("stored state or eigenvectors do not match the model's " +
                      std::to_string(full.dim()) + " parameters");
  const Vector v0 = spec.eigenvectors.col(req.directions[0]);
  const Vector v1 = spec.eigenvectors.col(req.directions[1]);
  std::vector<double> extra;
  if (!req.trajectories.empty()) {
    std::string csv = "source,c0,c1,loss\n";
    for (std::size_t f = 0; f < req.trajectories.size(); ++f) {
      const TrajectoryTable t = read_trajectory_csv(req.trajectories[f]);
      if (t.theta.cols() != full.dim()) throw ConfigError(req.trajectories[f] + " has no matching theta columns");
      std::vector<Vector> thetas;
      for (Eigen::Index r = 0; r < t.theta.rows(); ++r)
        if (t.walker[std::size_t(r)] == 0) thetas.push_back(t.theta.row(r).transpose());
      for (const auto& p : project_trajectory(thetas, center, v0, v1, full)) {
        extra.push_back(p.loss);
        csv += std::to_string(f) + ',' + format_double(p.c0) + ',' + format_double(p.c1) + ',' +
               format_double(p.loss) + '\n';
      }
    }
    write_file_atomic((fs::path(outdir) / "projection.csv").string(), csv);
  }
  const LandscapeGrid g = landscape_grid(full, center, v0, v1, req.half_widths[0], req.half_widths[1],
                                         req.samples, extra);
  write_file_atomic((fs::path(outdir) / "landscape.csv").string(), landscape_csv(g));
}

}  // namespace gibbsnet
