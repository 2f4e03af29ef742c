#include "gibbsnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "gibbsnet/errors.hpp"

namespace gibbsnet {

using nlohmann::json;

namespace {

// Reads typed fields from a JSON object and collects every problem instead
// of stopping at the first one.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& errs)
      : obj_(obj), path_(std::move(path)), errs_(errs) {
    if (!obj_.is_object()) errs_.push_back(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      errs_.push_back(path_ + "." + key + ": wrong type (" + obj_.at(key).dump() + ")");
    }
  }

  template <class T>
  void require(const char* key, T& out) {
    if (obj_.is_object() && !obj_.contains(key)) errs_.push_back(path_ + "." + key + ": required");
    get(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void error(const std::string& key, const std::string& msg) {
    errs_.push_back(path_ + "." + key + ": " + msg);
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) errs_.push_back(path_ + "." + k + ": unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& errs_;
  std::set<std::string> seen_;
};

template <class E, class F>
void get_enum(Reader& r, const char* key, E& out, F parse) {
  std::string s;
  r.get(key, s);
  if (s.empty()) return;
  try {
    out = parse(s);
  } catch (const ConfigError& e) {
    r.error(key, e.what());
  }
}

void parse_dataset(const json& j, DatasetSpec& d, std::vector<std::string>& errs) {
  Reader r(j, "dataset", errs);
  r.require("kind", d.kind);
  r.get("a", d.a);
  r.get("points", d.points);
  r.get("spread", d.spread);
  r.get("relative_noise", d.relative_noise);
  r.get("dim", d.dim);
  r.get("eig_lo", d.eig_lo);
  r.get("eig_hi", d.eig_hi);
  r.get("seed", d.seed);
  r.get("path", d.path);
  r.get("split", d.split);
  std::vector<int> digits;
  r.get("digits", digits);
  if (!digits.empty()) {
    if (digits.size() != 2)
      r.error("digits", "expected two digits");
    else
      d.digits = std::make_pair(digits[0], digits[1]);
  }
  r.get("limit", d.limit);
  r.get("label_columns", d.label_columns);
  r.finish();
}

void parse_model(const json& j, ModelSpec& m, std::vector<std::string>& errs) {
  Reader r(j, "model", errs);
  r.require("layers", m.arch.layer_sizes);
  get_enum(r, "activation", m.arch.hidden_activation, parse_activation);
  get_enum(r, "loss", m.arch.loss, parse_loss_kind);
  get_enum(r, "reduction", m.reduction, parse_reduction);
  if (const json* init = r.child("init")) {
    Reader ri(*init, "model.init", errs);
    ri.get("kind", m.init.kind);
    ri.get("scale", m.init.scale);
    ri.get("seed", m.init.seed);
    ri.get("path", m.init.path);
    ri.finish();
  }
  r.finish();
}

void parse_phase(const json& j, PhaseSpec& p, const std::string& path,
                 std::vector<std::string>& errs) {
  Reader r(j, path, errs);
  r.get("name", p.name);
  get_enum(r, "sampler", p.kind, parse_sampler_kind);
  r.get("sequence", p.sequence);
  r.require("steps", p.steps);
  r.get("step_size", p.step_size);
  r.get("friction", p.friction);
  r.get("beta", p.beta);
  r.get("batch_size", p.batch_size);
  if (const json* s = r.child("seed")) {
    if (s->is_number_unsigned())
      p.seed = s->get<std::uint64_t>();
    else
      r.error("seed", "must be a nonnegative integer");
  }
  r.get("walkers", p.walkers);
  r.get("ensemble", p.ensemble);
  r.get("eta", p.eta);
  r.get("rebuild_period", p.rebuild_period);
  get_enum(r, "kick_form", p.kick_form, parse_kick_form);
  r.get("hmc_inner_steps", p.hmc_inner_steps);
  r.get("hmc_randomize_steps", p.hmc_randomize_steps);
  r.get("inject_noise", p.inject_noise);
  if (const json* f = r.child("freeze")) {
    Reader rf(*f, path + ".freeze", errs);
    rf.get("indices", p.freeze.indices);
    rf.get("bias_layers", p.freeze.bias_layers);
    rf.finish();
  }
  r.get("record", p.record);
  r.get("dump_preconditioners", p.dump_preconditioners);
  r.finish();
}

void parse_analysis(const json& j, AnalysisSpec& a, std::vector<std::string>& errs) {
  Reader r(j, "analysis", errs);
  r.get("thin", a.thin);
  r.get("store_theta", a.store_theta);
  r.get("iat", a.iat);
  r.get("spectrum", a.spectrum);
  r.get("spectrum_k", a.spectrum_k);
  if (const json* l = r.child("landscape")) {
    LandscapeSpec ls;
    Reader rl(*l, "analysis.landscape", errs);
    rl.get("directions", ls.directions);
    rl.get("half_widths", ls.half_widths);
    rl.get("samples", ls.samples);
    rl.get("project_trajectory", ls.project_trajectory);
    rl.finish();
    a.landscape = ls;
  }
  r.finish();
}

[[noreturn]] void fail(const std::vector<std::string>& errs) {
  std::string msg = "invalid configuration (" + std::to_string(errs.size()) + " problem" +
                    (errs.size() == 1 ? "" : "s") + "):";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ConfigError(msg);
}

}  // namespace

bool phase_is_stochastic(const PhaseSpec& p) {
  if (p.kind == SamplerKind::GD || p.kind == SamplerKind::BBGD) return p.batch_size > 0;
  if (p.kind == SamplerKind::SGD) return true;
  if (p.kind == SamplerKind::SGLD) return p.inject_noise || p.batch_size > 0;
  return true;
}

ExperimentConfig parse_config(const json& j) {
  std::vector<std::string> errs;
  ExperimentConfig cfg;
  Reader r(j, "config", errs);
  r.require("schema_version", cfg.schema_version);
  if (cfg.schema_version != kConfigSchemaVersion)
    r.error("schema_version", "unsupported version " + std::to_string(cfg.schema_version) +
                                  " (this build reads " + std::to_string(kConfigSchemaVersion) + ")");
  r.get("name", cfg.name);
  r.get("output", cfg.output);
  if (const json* d = r.child("dataset"))
    parse_dataset(*d, cfg.dataset, errs);
  else
    r.error("dataset", "required");
  if (const json* m = r.child("model"))
    parse_model(*m, cfg.model, errs);
  else
    r.error("model", "required");
  if (const json* ps = r.child("phases")) {
    if (!ps->is_array()) {
      r.error("phases", "expected an array");
    } else {
      for (std::size_t i = 0; i < ps->size(); ++i) {
        PhaseSpec p;
        parse_phase((*ps)[i], p, "phases[" + std::to_string(i) + "]", errs);
        if (p.name.empty()) p.name = "phase" + std::to_string(i);
        cfg.phases.push_back(std::move(p));
      }
    }
  } else {
    r.error("phases", "required");
  }
  if (const json* a = r.child("analysis")) parse_analysis(*a, cfg.analysis, errs);
  r.finish();
  for (auto& e : validation_errors(cfg)) errs.push_back(std::move(e));
  if (!errs.empty()) fail(errs);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

void validate_config(const ExperimentConfig& cfg) {
  const auto errs = validation_errors(cfg);
  if (!errs.empty()) fail(errs);
}

std::vector<std::string> validation_errors(const ExperimentConfig& cfg) {
  std::vector<std::string> errs;
  const auto& d = cfg.dataset;
  Eigen::Index in_dim = -1, out_dim = -1;
  if (d.kind == "harmonic") {
    if (!(d.a > 0.0)) errs.push_back("dataset.a must be positive");
    in_dim = out_dim = 1;
  } else if (d.kind == "two_clusters") {
    if (d.points < 2 || d.points % 2) errs.push_back("dataset.points must be even and >= 2");
    if (!(d.spread >= 0.0)) errs.push_back("dataset.spread must be nonnegative");
    if (!(d.relative_noise >= 0.0)) errs.push_back("dataset.relative_noise must be nonnegative");
    in_dim = 2;
    out_dim = 1;
  } else if (d.kind == "gaussian") {
    if (d.dim < 2) errs.push_back("dataset.dim must be >= 2");
    if (!(d.eig_lo > 0.0 && d.eig_lo < d.eig_hi))
      errs.push_back("dataset eigenvalue range needs 0 < eig_lo < eig_hi");
    in_dim = d.dim;
    out_dim = 1;
  } else if (d.kind == "mnist") {
    if (d.path.empty()) errs.push_back("dataset.path (MNIST directory) is required");
    if (d.split != "train" && d.split != "validation" && d.split != "test")
      errs.push_back("dataset.split must be train, validation or test");
    if (d.digits && (d.digits->first < 0 || d.digits->first > 9 || d.digits->second < 0 ||
                     d.digits->second > 9 || d.digits->first == d.digits->second))
      errs.push_back("dataset.digits must be two distinct digits 0-9");
    in_dim = 784;
    out_dim = d.digits ? 2 : 10;
  } else if (d.kind == "csv") {
    if (d.path.empty()) errs.push_back("dataset.path (CSV file) is required");
    if (d.label_columns < 1) errs.push_back("dataset.label_columns must be >= 1");
  } else {
    errs.push_back("dataset.kind '" + d.kind +
                   "' is not one of harmonic, two_clusters, gaussian, mnist, csv");
  }
  if (d.limit < 0) errs.push_back("dataset.limit must be nonnegative");

  const Architecture& arch = cfg.model.arch;
  bool arch_ok = true;
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    errs.push_back(std::string("model: ") + e.what());
    arch_ok = false;
  }
  if (arch_ok && in_dim > 0 && arch.input_dim() != in_dim)
    errs.push_back("model input size " + std::to_string(arch.input_dim()) + " does not match dataset (" +
                   std::to_string(in_dim) + ")");
  if (arch_ok && out_dim > 0 && arch.output_dim() != out_dim)
    errs.push_back("model output size " + std::to_string(arch.output_dim()) +
                   " does not match dataset (" + std::to_string(out_dim) + ")");
  const auto& init = cfg.model.init;
  if (init.kind != "zeros" && init.kind != "normal" && init.kind != "file")
    errs.push_back("model.init.kind must be zeros, normal or file");
  if (init.kind == "file" && init.path.empty()) errs.push_back("model.init.path is required");

  if (cfg.phases.empty()) errs.push_back("at least one phase is required");
  const Eigen::Index n = arch_ok ? arch.param_count() : 0;
  for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
    const PhaseSpec& p = cfg.phases[i];
    const std::string where = "phase '" + p.name + "': ";
    if (p.steps == 0) errs.push_back(where + "steps must be positive");
    if (p.batch_size < 0) errs.push_back(where + "batch_size must be nonnegative");
    if (p.walkers < 1) errs.push_back(where + "walkers must be >= 1");
    if (p.ensemble && p.kind != SamplerKind::BAOAB)
      errs.push_back(where + "ensemble phases use the BAOAB sampler");
    if (p.ensemble && !(p.eta >= 0.0)) errs.push_back(where + "eta must be nonnegative");
    if (p.ensemble && p.rebuild_period < 1) errs.push_back(where + "rebuild_period must be >= 1");
    if (phase_is_stochastic(p) && !p.seed)
      errs.push_back(where + "stochastic phase needs an explicit seed");
    if (i > 0 && p.walkers != cfg.phases[i - 1].walkers && cfg.phases[i - 1].walkers != 1)
      errs.push_back(where + "walker count may only change from 1 (state is carried across phases)");
    for (Eigen::Index k : p.freeze.indices)
      if (arch_ok && (k < 0 || k >= n))
        errs.push_back(where + "freeze index " + std::to_string(k) + " out of range");
    for (int l : p.freeze.bias_layers)
      if (arch_ok && (l < -1 || l >= arch.layer_count()))
        errs.push_back(where + "freeze bias layer " + std::to_string(l) + " out of range");
    if (arch_ok) {
      try {
        SamplerConfig sc = sampler_config(p, arch);
        sc.validate(n);
      } catch (const ConfigError& e) {
        errs.push_back(where + e.what());
      }
    }
  }

  const auto& a = cfg.analysis;
  if (a.thin < 1) errs.push_back("analysis.thin must be >= 1");
  for (const auto& o : a.iat)
    if (o != "loss" && o != "kinetic_energy" && o != "virial")
      errs.push_back("analysis.iat: unknown observable '" + o + "'");
  if ((a.spectrum || a.landscape) && !a.store_theta)
    errs.push_back("analysis.spectrum and analysis.landscape need analysis.store_theta");
  if (a.spectrum_k < 0) errs.push_back("analysis.spectrum_k must be nonnegative");
  if (a.landscape) {
    const auto& l = *a.landscape;
    if (l.directions.size() != 2) errs.push_back("analysis.landscape.directions needs two indices");
    if (l.half_widths.size() != 2) errs.push_back("analysis.landscape.half_widths needs two values");
    for (double h : l.half_widths)
      if (!(h > 0.0)) errs.push_back("analysis.landscape.half_widths must be positive");
    for (int k : l.directions)
      if (k < 0 || (arch_ok && k >= n))
        errs.push_back("analysis.landscape direction " + std::to_string(k) + " out of range");
    if (l.samples < 2) errs.push_back("analysis.landscape.samples must be >= 2");
  }
  return errs;
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["name"] = cfg.name;
  if (!cfg.output.empty()) j["output"] = cfg.output;
  const auto& d = cfg.dataset;
  json dj = {{"kind", d.kind}};
  if (d.kind == "harmonic") dj["a"] = d.a;
  if (d.kind == "two_clusters") {
    dj["points"] = d.points;
    dj["spread"] = d.spread;
    dj["relative_noise"] = d.relative_noise;
    dj["seed"] = d.seed;
  }
  if (d.kind == "gaussian") {
    dj["dim"] = d.dim;
    dj["eig_lo"] = d.eig_lo;
    dj["eig_hi"] = d.eig_hi;
    dj["seed"] = d.seed;
  }
  if (d.kind == "mnist") {
    dj["path"] = d.path;
    dj["split"] = d.split;
    if (d.digits) dj["digits"] = {d.digits->first, d.digits->second};
  }
  if (d.kind == "csv") {
    dj["path"] = d.path;
    dj["label_columns"] = d.label_columns;
  }
  if (d.limit) dj["limit"] = d.limit;
  j["dataset"] = dj;

  const auto& m = cfg.model;
  j["model"] = {{"layers", m.arch.layer_sizes},
                {"activation", to_string(m.arch.hidden_activation)},
                {"loss", to_string(m.arch.loss)},
                {"reduction", m.reduction == Reduction::sum ? "sum" : "mean"},
                {"init", {{"kind", m.init.kind}, {"scale", m.init.scale}, {"seed", m.init.seed}}}};
  if (!m.init.path.empty()) j["model"]["init"]["path"] = m.init.path;

  json phases = json::array();
  for (const auto& p : cfg.phases) {
    json pj = {{"name", p.name},
               {"sampler", to_string(p.kind)},
               {"steps", p.steps},
               {"step_size", p.step_size},
               {"friction", p.friction},
               {"beta", p.beta},
               {"batch_size", p.batch_size},
               {"walkers", p.walkers},
               {"record", p.record}};
    if (p.seed) pj["seed"] = *p.seed;
    if (!p.sequence.empty()) pj["sequence"] = p.sequence;
    if (p.ensemble) {
      pj["ensemble"] = true;
      pj["eta"] = p.eta;
      pj["rebuild_period"] = p.rebuild_period;
      pj["kick_form"] = p.kick_form == EqnKickForm::printed ? "printed" : "transpose";
      pj["dump_preconditioners"] = p.dump_preconditioners;
    }
    if (p.kind == SamplerKind::HMC) {
      pj["hmc_inner_steps"] = p.hmc_inner_steps;
      pj["hmc_randomize_steps"] = p.hmc_randomize_steps;
    }
    if (!p.inject_noise) pj["inject_noise"] = false;
    if (!p.freeze.empty())
      pj["freeze"] = {{"indices", p.freeze.indices}, {"bias_layers", p.freeze.bias_layers}};
    phases.push_back(pj);
  }
  j["phases"] = phases;

  const auto& a = cfg.analysis;
  json aj = {{"thin", a.thin}, {"store_theta", a.store_theta}, {"iat", a.iat},
             {"spectrum", a.spectrum}, {"spectrum_k", a.spectrum_k}};
  if (a.landscape)
    aj["landscape"] = {{"directions", a.landscape->directions},
                       {"half_widths", a.landscape->half_widths},
                       {"samples", a.landscape->samples},
                       {"project_trajectory", a.landscape->project_trajectory}};
  j["analysis"] = aj;
  return j;
}

namespace {

std::shared_ptr<Dataset> read_csv_dataset(const std::string& path, int label_columns) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset file '" + path + "' is empty");
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (width == 0) width = row.size();
    if (row.size() != width)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                        " columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("dataset file '" + path + "' has no rows");
  if (width <= std::size_t(label_columns))
    throw ConfigError("dataset file '" + path + "' has no input columns");
  auto d = std::make_shared<Dataset>();
  const Eigen::Index m = Eigen::Index(rows.size());
  const Eigen::Index c = label_columns, in_dim = Eigen::Index(width) - c;
  d->inputs.resize(m, in_dim);
  d->labels.resize(m, c);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < Eigen::Index(width); ++k) {
      const double v = rows[std::size_t(i)][std::size_t(k)];
      if (k < in_dim)
        d->inputs(i, k) = v;
      else
        d->labels(i, k - in_dim) = v;
    }
  return d;
}

}  // namespace

std::shared_ptr<Dataset> build_dataset(const DatasetSpec& d) {
  std::shared_ptr<Dataset> out;
  if (d.kind == "harmonic") {
    out = std::make_shared<Dataset>(make_harmonic(d.a));
  } else if (d.kind == "two_clusters") {
    TwoClusterOptions opt;
    opt.spread = d.spread;
    opt.relative_noise = d.relative_noise;
    out = std::make_shared<Dataset>(make_two_clusters(d.points, d.seed, opt));
  } else if (d.kind == "gaussian") {
    out = std::make_shared<Dataset>(make_gaussian_model(d.dim, d.eig_lo, d.eig_hi, d.seed).data);
  } else if (d.kind == "mnist") {
    MnistSplit s = load_mnist_split(d.path, d.digits);
    Dataset& pick = d.split == "train" ? s.train : d.split == "validation" ? s.validation : s.test;
    out = std::make_shared<Dataset>(std::move(pick));
  } else if (d.kind == "csv") {
    out = read_csv_dataset(d.path, d.label_columns);
  } else {
    throw ConfigError("unknown dataset kind '" + d.kind + "'");
  }
  if (d.limit > 0 && d.limit < out->size()) {
    std::vector<Eigen::Index> rows(std::size_t(d.limit));
    for (int i = 0; i < d.limit; ++i) rows[std::size_t(i)] = i;
    out = std::make_shared<Dataset>(out->subset(rows));
  }
  return out;
}

Vector initial_parameters(const ModelSpec& spec) {
  const Eigen::Index n = spec.arch.param_count();
  if (spec.init.kind == "zeros") return Vector::Zero(n);
  if (spec.init.kind == "normal") {
    Rng rng(spec.init.seed, 0xC0FFEE);
    Vector v(n);
    rng.fill_normal(v);
    return spec.init.scale * v;
  }
  std::ifstream in(spec.init.path);
  if (!in) throw ConfigError("cannot open initial parameter file '" + spec.init.path + "'");
  std::vector<double> vals;
  std::string cell;
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    try {
      vals.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError("initial parameter file: bad number '" + cell + "'");
    }
  }
  if (Eigen::Index(vals.size()) != n)
    throw ConfigError("initial parameter file has " + std::to_string(vals.size()) +
                      " values, model has " + std::to_string(n) + " parameters");
  return Eigen::Map<Vector>(vals.data(), n);
}

Vector freeze_mask(const Architecture& arch, const FreezeSpec& spec) {
  if (spec.empty()) return Vector();
  const Eigen::Index n = arch.param_count();
  Vector mask = Vector::Ones(n);
  for (Eigen::Index k : spec.indices) {
    if (k < 0 || k >= n) throw ConfigError("freeze index " + std::to_string(k) + " out of range");
    mask[k] = 0.0;
  }
  for (int l : spec.bias_layers) {
    const int layer = l < 0 ? arch.layer_count() - 1 : l;
    if (layer < 0 || layer >= arch.layer_count())
      throw ConfigError("freeze bias layer " + std::to_string(l) + " out of range");
    mask.segment(arch.bias_offset(layer), arch.layer_sizes[std::size_t(layer) + 1]).setZero();
  }
  return mask;
}

SamplerConfig sampler_config(const PhaseSpec& p, const Architecture& arch) {
  SamplerConfig s;
  s.kind = p.kind;
  s.step_size = p.step_size;
  s.friction = p.friction;
  s.inverse_temperature = p.beta;
  s.sequence = p.sequence;
  s.hmc_inner_steps = p.hmc_inner_steps;
  s.hmc_randomize_steps = p.hmc_randomize_steps;
  s.inject_noise = p.inject_noise;
  s.mobile_mask = freeze_mask(arch, p.freeze);
  return s;
}

void apply_seed_override(ExperimentConfig& cfg, std::uint64_t seed) {
  for (std::size_t i = 0; i < cfg.phases.size(); ++i) cfg.phases[i].seed = seed + i;
}

}  // namespace gibbsnet
