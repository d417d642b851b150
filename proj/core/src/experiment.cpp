#include "mfdyn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mfdyn/rng.hpp"

namespace mfdyn {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr std::uint64_t kParticleStream = 0x70ULL;
constexpr std::uint64_t kChaosRefStream = 0xCAULL;
constexpr std::uint64_t kLlnRefStream = 0x9eULL;

const std::vector<std::string>& experiment_order() {
  static const std::vector<std::string> order{"validate", "solve", "meanfield",
                                              "game",     "particles", "chaos"};
  return order;
}

std::string error_name(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const InvalidGrid*>(&e)) return "InvalidGrid";
  if (dynamic_cast<const InvalidIntensity*>(&e)) return "InvalidIntensity";
  if (dynamic_cast<const SingularRegression*>(&e)) return "SingularRegression";
  if (dynamic_cast<const EmptySample*>(&e)) return "EmptySample";
  if (dynamic_cast<const LengthMismatch*>(&e)) return "LengthMismatch";
  if (dynamic_cast<const ObstacleCross*>(&e)) return "ObstacleCross";
  if (dynamic_cast<const ImplicitDiverge*>(&e)) return "ImplicitDiverge";
  if (dynamic_cast<const NoConvergence*>(&e)) return "NoConvergence";
  if (dynamic_cast<const TooLarge*>(&e)) return "TooLarge";
  if (dynamic_cast<const InvalidTerminal*>(&e)) return "InvalidTerminal";
  if (dynamic_cast<const InvalidParam*>(&e)) return "InvalidParam";
  if (dynamic_cast<const BackendUnsupported*>(&e)) return "BackendUnsupported";
  return "Error";
}

std::string g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << content;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_keys(const json& obj, const std::string& ctx, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + ctx + " must be an object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      throw ConfigError("config: unknown key '" + item.key() + "' in " + ctx);
}

double num_at(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(std::string("config: ") + key + " must be a number");
  return v.get<double>();
}

int int_at(const json& obj, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("config: ") + key + " must be an integer");
  return v.get<int>();
}

std::uint64_t uint_at(const json& obj, const char* key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError(std::string("config: ") + key + " must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::vector<double> doubles_at(const json& v, const std::string& ctx) {
  if (!v.is_array()) throw ConfigError("config: " + ctx + " must be an array of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) throw ConfigError("config: " + ctx + " must contain only numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

const char* tool_version() { return kVersion; }

CoefficientSet InlineCoefficients::build() const {
  if (!(floor_s < cap_s)) throw InvalidParam("inline coefficients: floor must lie below cap");
  if (xlo < floor_s || xhi > cap_s)
    throw InvalidParam("inline coefficients: terminal clamp range must sit inside [floor, cap]");
  if (xlo > xhi) throw InvalidParam("inline coefficients: terminal clamp range is empty");

  CoefficientSet cs;
  const InlineCoefficients s = *this;
  cs.f = [s](double, double y, double z, double u, const MeasureSlice& mu) {
    return s.a0 + s.ay * y + s.az * z + s.au * u + s.am * mu.mean();
  };
  cs.h1_core = [s](double, double y, const MeasureSlice& mu) {
    return s.b0 + s.by * std::tanh(y) + s.bm * std::tanh(mu.mean());
  };
  cs.h2_core = [s](double, double y, const MeasureSlice& mu) {
    return s.c0 + s.cy * std::tanh(y) + s.cm * std::tanh(mu.mean());
  };
  cs.S = [v = floor_s](double, const LatticeState&) { return v; };
  cs.Sp = [v = cap_s](double, const LatticeState&) { return v; };
  cs.xi = [s](const LatticeState& st) {
    double jumps = 0.0;
    for (int k : st.jump_counts) jumps += k;
    return std::min(std::max(s.x0 + s.xb * st.b + s.xj * jumps, s.xlo), s.xhi);
  };
  cs.C_f = std::abs(ay) + std::abs(az) + std::abs(au) + std::abs(am);
  cs.gamma1 = std::abs(by);
  cs.gamma2 = std::abs(bm);
  cs.kappa1 = std::abs(cy);
  cs.kappa2 = std::abs(cm);
  cs.p = p;
  cs.comparison_ok = true;
  cs.probe_radius = 3.0;
  return cs;
}

RunConfig parse_run_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  check_keys(root, "top level",
             {"scenario", "coefficients", "lattice", "solver", "fixed_point", "experiments",
              "validate", "particles", "chaos", "out_dir"});

  RunConfig cfg;
  const bool has_name = root.contains("scenario");
  const bool has_inline = root.contains("coefficients");
  if (has_name == has_inline)
    throw ConfigError("config: exactly one of 'scenario' and 'coefficients' is required");
  if (has_name) {
    if (!root.at("scenario").is_string()) throw ConfigError("config: scenario must be a string");
    cfg.scenario = root.at("scenario").get<std::string>();
  } else {
    const json& co = root.at("coefficients");
    check_keys(co, "coefficients",
               {"a0", "ay", "az", "au", "am", "b0", "by", "bm", "c0", "cy", "cm", "floor", "cap",
                "x0", "xb", "xj", "xlo", "xhi", "p"});
    InlineCoefficients ic;
    ic.a0 = num_at(co, "a0", ic.a0);
    ic.ay = num_at(co, "ay", ic.ay);
    ic.az = num_at(co, "az", ic.az);
    ic.au = num_at(co, "au", ic.au);
    ic.am = num_at(co, "am", ic.am);
    ic.b0 = num_at(co, "b0", ic.b0);
    ic.by = num_at(co, "by", ic.by);
    ic.bm = num_at(co, "bm", ic.bm);
    ic.c0 = num_at(co, "c0", ic.c0);
    ic.cy = num_at(co, "cy", ic.cy);
    ic.cm = num_at(co, "cm", ic.cm);
    ic.floor_s = num_at(co, "floor", ic.floor_s);
    ic.cap_s = num_at(co, "cap", ic.cap_s);
    ic.x0 = num_at(co, "x0", ic.x0);
    ic.xb = num_at(co, "xb", ic.xb);
    ic.xj = num_at(co, "xj", ic.xj);
    ic.xlo = num_at(co, "xlo", ic.xlo);
    ic.xhi = num_at(co, "xhi", ic.xhi);
    ic.p = num_at(co, "p", ic.p);
    cfg.inline_set = true;
    cfg.inline_coeffs = ic;
  }

  if (root.contains("lattice")) {
    const json& la = root.at("lattice");
    check_keys(la, "lattice", {"horizon", "steps", "marks", "intensities", "backend", "n_paths", "seed"});
    if (la.contains("horizon")) cfg.horizon = num_at(la, "horizon", 0.0);
    if (la.contains("steps")) cfg.steps = int_at(la, "steps", 0);
    if (la.contains("marks")) cfg.marks = doubles_at(la.at("marks"), "lattice.marks");
    if (la.contains("intensities"))
      cfg.intensities = doubles_at(la.at("intensities"), "lattice.intensities");
    if (la.contains("marks") != la.contains("intensities"))
      throw ConfigError("config: lattice.marks and lattice.intensities must come together");
    if (la.contains("backend")) {
      const std::string b = la.at("backend").is_string() ? la.at("backend").get<std::string>() : "";
      if (b != "tree" && b != "paths")
        throw ConfigError("config: lattice.backend must be \"tree\" or \"paths\"");
      cfg.backend = b;
    }
    if (la.contains("n_paths")) cfg.n_paths = int_at(la, "n_paths", 0);
    if (la.contains("seed")) cfg.seed = uint_at(la, "seed", 0);
  }

  if (root.contains("solver")) {
    const json& so = root.at("solver");
    check_keys(so, "solver", {"basis_degree", "implicit_tol", "implicit_max_iter", "damping"});
    cfg.solver.basis_degree = int_at(so, "basis_degree", cfg.solver.basis_degree);
    cfg.solver.implicit_tol = num_at(so, "implicit_tol", cfg.solver.implicit_tol);
    cfg.solver.implicit_max_iter = int_at(so, "implicit_max_iter", cfg.solver.implicit_max_iter);
    cfg.solver.implicit_damping = num_at(so, "damping", cfg.solver.implicit_damping);
  }

  if (root.contains("fixed_point")) {
    const json& fp = root.at("fixed_point");
    check_keys(fp, "fixed_point", {"mode", "max_iter", "tol", "damping", "window_steps", "init_value"});
    if (fp.contains("mode")) {
      const std::string m = fp.at("mode").is_string() ? fp.at("mode").get<std::string>() : "";
      if (m == "global")
        cfg.fixed_point.mode = FixedPointMode::Global;
      else if (m == "windowed")
        cfg.fixed_point.mode = FixedPointMode::WindowedPasting;
      else
        throw ConfigError("config: fixed_point.mode must be \"global\" or \"windowed\"");
    }
    cfg.fixed_point.max_iter = int_at(fp, "max_iter", cfg.fixed_point.max_iter);
    cfg.fixed_point.tol = num_at(fp, "tol", cfg.fixed_point.tol);
    cfg.fixed_point.damping = num_at(fp, "damping", cfg.fixed_point.damping);
    cfg.fixed_point.window_steps = int_at(fp, "window_steps", cfg.fixed_point.window_steps);
    cfg.fixed_point.init_value = num_at(fp, "init_value", cfg.fixed_point.init_value);
  }

  if (root.contains("experiments")) {
    const json& ex = root.at("experiments");
    if (!ex.is_array()) throw ConfigError("config: experiments must be an array of names");
    cfg.experiments.clear();
    for (const json& e : ex) {
      if (!e.is_string()) throw ConfigError("config: experiments must be an array of names");
      const std::string name = e.get<std::string>();
      if (std::find(experiment_order().begin(), experiment_order().end(), name) ==
          experiment_order().end())
        throw ConfigError("config: unknown experiment '" + name + "'");
      cfg.experiments.push_back(name);
    }
  }

  if (root.contains("validate")) {
    const json& va = root.at("validate");
    check_keys(va, "validate", {"probes"});
    cfg.validate_probes = int_at(va, "probes", cfg.validate_probes);
  }

  if (root.contains("particles")) {
    const json& pa = root.at("particles");
    check_keys(pa, "particles", {"n", "n_paths", "tol", "max_outer", "damping"});
    cfg.particles_n = int_at(pa, "n", cfg.particles_n);
    cfg.particles_paths = int_at(pa, "n_paths", cfg.particles_paths);
    cfg.particles_tol = num_at(pa, "tol", cfg.particles_tol);
    cfg.particles_max_outer = int_at(pa, "max_outer", cfg.particles_max_outer);
    cfg.particles_damping = num_at(pa, "damping", cfg.particles_damping);
    if (!(cfg.particles_damping > 0.0) || cfg.particles_damping > 1.0)
      throw ConfigError("config: particles.damping must lie in (0, 1]");
  }

  if (root.contains("chaos")) {
    const json& ch = root.at("chaos");
    check_keys(ch, "chaos", {"n_grid", "seeds", "n_ref", "n_paths"});
    if (ch.contains("n_grid")) {
      cfg.chaos_n_grid.clear();
      for (double v : doubles_at(ch.at("n_grid"), "chaos.n_grid"))
        cfg.chaos_n_grid.push_back(static_cast<int>(v));
    }
    if (ch.contains("seeds")) {
      cfg.chaos_seeds.clear();
      for (double v : doubles_at(ch.at("seeds"), "chaos.seeds"))
        cfg.chaos_seeds.push_back(static_cast<std::uint64_t>(v));
    }
    cfg.chaos_n_ref = int_at(ch, "n_ref", cfg.chaos_n_ref);
    cfg.chaos_paths = int_at(ch, "n_paths", cfg.chaos_paths);
  }

  if (root.contains("out_dir")) {
    if (!root.at("out_dir").is_string()) throw ConfigError("config: out_dir must be a string");
    cfg.out_dir = root.at("out_dir").get<std::string>();
  }
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config_text(ss.str());
}

std::string canonical_config_text(const RunConfig& cfg) {
  json root;
  if (cfg.inline_set) {
    const InlineCoefficients& ic = cfg.inline_coeffs;
    root["coefficients"] = {{"a0", ic.a0},   {"ay", ic.ay}, {"az", ic.az}, {"au", ic.au},
                            {"am", ic.am},   {"b0", ic.b0}, {"by", ic.by}, {"bm", ic.bm},
                            {"c0", ic.c0},   {"cy", ic.cy}, {"cm", ic.cm}, {"floor", ic.floor_s},
                            {"cap", ic.cap_s}, {"x0", ic.x0}, {"xb", ic.xb}, {"xj", ic.xj},
                            {"xlo", ic.xlo}, {"xhi", ic.xhi}, {"p", ic.p}};
  } else {
    root["scenario"] = cfg.scenario;
  }
  json lattice = json::object();
  if (cfg.horizon) lattice["horizon"] = *cfg.horizon;
  if (cfg.steps) lattice["steps"] = *cfg.steps;
  if (cfg.marks) lattice["marks"] = *cfg.marks;
  if (cfg.intensities) lattice["intensities"] = *cfg.intensities;
  if (cfg.backend) lattice["backend"] = *cfg.backend;
  if (cfg.n_paths) lattice["n_paths"] = *cfg.n_paths;
  if (cfg.seed) lattice["seed"] = *cfg.seed;
  if (!lattice.empty()) root["lattice"] = lattice;
  root["solver"] = {{"basis_degree", cfg.solver.basis_degree},
                    {"implicit_tol", cfg.solver.implicit_tol},
                    {"implicit_max_iter", cfg.solver.implicit_max_iter},
                    {"damping", cfg.solver.implicit_damping}};
  root["fixed_point"] = {
      {"mode", cfg.fixed_point.mode == FixedPointMode::Global ? "global" : "windowed"},
      {"max_iter", cfg.fixed_point.max_iter},
      {"tol", cfg.fixed_point.tol},
      {"damping", cfg.fixed_point.damping},
      {"window_steps", cfg.fixed_point.window_steps},
      {"init_value", cfg.fixed_point.init_value}};
  root["experiments"] = cfg.experiments;
  root["validate"] = {{"probes", cfg.validate_probes}};
  root["particles"] = {{"n", cfg.particles_n},
                       {"n_paths", cfg.particles_paths},
                       {"tol", cfg.particles_tol},
                       {"max_outer", cfg.particles_max_outer},
                       {"damping", cfg.particles_damping}};
  root["chaos"] = {{"n_grid", cfg.chaos_n_grid},
                   {"seeds", cfg.chaos_seeds},
                   {"n_ref", cfg.chaos_n_ref},
                   {"n_paths", cfg.chaos_paths}};
  root["out_dir"] = cfg.out_dir;
  return root.dump(2) + "\n";
}

std::string config_hash8(const std::string& canonical) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%08llx",
                static_cast<unsigned long long>(h & 0xffffffffULL) ^
                    static_cast<unsigned long long>(h >> 32));
  return buf;
}

Scenario resolve_scenario(const RunConfig& cfg) {
  Scenario sc;
  if (cfg.inline_set) {
    try {
      sc.coefficients = cfg.inline_coeffs.build();
    } catch (const std::exception& e) {
      throw ConfigError(error_name(e) + ": " + e.what());
    }
    sc.name = "inline";
    sc.description = "coefficients supplied by the run config";
    sc.grid = TimeGrid{1.0, 8};
  } else {
    const Scenario* found = find_scenario(cfg.scenario);
    if (!found) throw ConfigError("config: unknown scenario '" + cfg.scenario + "'");
    sc = *found;
  }
  if (cfg.horizon) sc.grid.horizon = *cfg.horizon;
  if (cfg.steps) sc.grid.steps = *cfg.steps;
  if (cfg.marks) sc.jumps.marks = *cfg.marks;
  if (cfg.intensities) sc.jumps.intensities = *cfg.intensities;
  if (cfg.backend) sc.backend = *cfg.backend == "tree" ? Backend::Tree : Backend::Paths;
  if (cfg.n_paths) sc.n_paths = *cfg.n_paths;
  if (cfg.seed) sc.seed = *cfg.seed;
  return sc;
}

namespace {

struct RunState {
  const RunConfig* cfg = nullptr;
  Scenario scenario;
  std::filesystem::path dir;
  std::string h8;
  json invariants = json::object();
  RunSummary summary;

  void add_output(const std::string& experiment, const std::string& file) {
    summary.outputs.push_back({experiment, file});
  }
  void note(const std::string& msg) { summary.messages.push_back(msg); }
};

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += csv_cell(cells[i]);
  }
  line += '\n';
  return line;
}

// Worst flatness / mutual-singularity residuals of a solved instance
// against the flow it was solved with.
struct PushResiduals {
  double flat1 = 0.0, flat2 = 0.0, mutual = 0.0;
};

PushResiduals push_residuals(const NoiseLattice& lattice, const CoefficientSet& c,
                             const MeasureFlow& flow, const DRBSDESolution& sol) {
  PushResiduals r;
  const int M = lattice.grid.steps;
  for (int m = 0; m < M; ++m) {
    const double t = lattice.grid.time(m);
    const int cols = static_cast<int>(sol.Y[m].size());
    for (int i = 0; i < cols; ++i) {
      const LatticeState st = lattice.backend == Backend::Tree ? lattice.tree.levels[m][i].state
                                                               : lattice.path_state(i, m);
      const double y = sol.Y[m][i];
      const double h1 = c.h1(t, y, st, flow.at(m));
      const double h2 = c.h2(t, y, st, flow.at(m));
      r.flat1 = std::max(r.flat1, sol.dK1[m][i] * std::abs(y - h1));
      r.flat2 = std::max(r.flat2, sol.dK2[m][i] * std::abs(h2 - y));
      r.mutual = std::max(r.mutual, std::min(sol.dK1[m][i], sol.dK2[m][i]));
    }
  }
  return r;
}

bool run_validate(RunState& st) {
  const NoiseLattice lattice = st.scenario.make_lattice();
  const ValidationReport report = validate_assumptions(st.scenario.coefficients, lattice,
                                                       st.cfg->validate_probes, st.scenario.seed);
  const ConditionCheck contraction = check_contraction_condition(st.scenario.coefficients);
  const ConditionCheck chaos = check_chaos_condition(st.scenario.coefficients);

  std::string csv = "check,measured,allowed,pass,witness\n";
  for (const CheckResult& ck : report.checks)
    csv += csv_join({ck.name, g17(ck.measured), g17(ck.allowed), ck.pass ? "true" : "false",
                     ck.witness});
  csv += csv_join({"contraction_condition", g17(contraction.lhs), g17(contraction.threshold),
                   contraction.holds ? "true" : "false", ""});
  csv += csv_join({"chaos_condition", g17(chaos.lhs), g17(chaos.threshold),
                   chaos.holds ? "true" : "false", "informational"});

  const std::string file = "validate_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("validate", file);

  const bool ok = report.all_pass() && contraction.holds;
  st.invariants["validate"] = {{"ok", ok},
                               {"checks", report.checks.size()},
                               {"contraction_lhs", contraction.lhs},
                               {"contraction_threshold", contraction.threshold},
                               {"chaos_condition_holds", chaos.holds}};
  if (!ok) st.note("validate: assumption audit failed: " + report.summary());
  return ok;
}

bool run_solve(RunState& st) {
  const NoiseLattice lattice = st.scenario.make_lattice();
  const CoefficientSet& c = st.scenario.coefficients;
  const int M = lattice.grid.steps;
  const MeasureFlow flow = MeasureFlow::dirac(st.cfg->fixed_point.init_value, M);
  const DRBSDESolution sol = solve_frozen(lattice, c, flow, st.cfg->solver);
  const PushResiduals pr = push_residuals(lattice, c, flow, sol);

  std::string csv = "step,time,y_mean,y_min,y_max,dk1_mean,dk2_mean\n";
  for (int m = 0; m <= M; ++m) {
    double mean = 0.0, wsum = 0.0;
    double lo = sol.Y[m][0], hi = sol.Y[m][0];
    const int cols = static_cast<int>(sol.Y[m].size());
    for (int i = 0; i < cols; ++i) {
      const double w = lattice.backend == Backend::Tree ? lattice.tree.levels[m][i].prob : 1.0;
      mean += w * sol.Y[m][i];
      wsum += w;
      lo = std::min(lo, sol.Y[m][i]);
      hi = std::max(hi, sol.Y[m][i]);
    }
    mean /= wsum;
    double dk1 = 0.0, dk2 = 0.0;
    if (m < M) {
      double w1 = 0.0;
      for (int i = 0; i < static_cast<int>(sol.dK1[m].size()); ++i) {
        const double w = lattice.backend == Backend::Tree ? lattice.tree.levels[m][i].prob : 1.0;
        dk1 += w * sol.dK1[m][i];
        dk2 += w * sol.dK2[m][i];
        w1 += w;
      }
      dk1 /= w1;
      dk2 /= w1;
    }
    csv += csv_join({std::to_string(m), g17(lattice.grid.time(m)), g17(mean), g17(lo), g17(hi),
                     g17(dk1), g17(dk2)});
  }
  const std::string file = "solve_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("solve", file);

  const bool ok = pr.flat1 <= 1e-9 && pr.flat2 <= 1e-9 && pr.mutual <= 1e-9;
  json j = {{"value", sol.root_value()},
            {"flatness_low", pr.flat1},
            {"flatness_high", pr.flat2},
            {"mutual_singularity", pr.mutual},
            {"ok", ok}};
  const std::string jfile = "solve_" + st.h8 + ".json";
  write_text(st.dir / jfile, j.dump(2) + "\n");
  st.add_output("solve", jfile);

  st.invariants["solve"] = j;
  if (!ok) st.note("solve: reflection residuals exceed tolerance");
  return ok;
}

bool run_meanfield(RunState& st) {
  const NoiseLattice lattice = st.scenario.make_lattice();
  FixedPointOptions fp = st.cfg->fixed_point;
  fp.solver = st.cfg->solver;
  const FixedPointResult res = fixed_point(lattice, st.scenario.coefficients, fp);

  std::string csv = "iteration,residual\n";
  for (std::size_t i = 0; i < res.history.size(); ++i)
    csv += csv_join({std::to_string(i + 1), g17(res.history[i])});
  const std::string file = "meanfield_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("meanfield", file);

  json j = {{"value", res.solution.root_value()},
            {"iterations", res.iterations},
            {"residual", res.residual},
            {"converged", res.converged},
            {"backend", st.scenario.backend == Backend::Tree ? "tree" : "paths"},
            {"steps", st.scenario.grid.steps}};
  const std::string jfile = "meanfield_" + st.h8 + ".json";
  write_text(st.dir / jfile, j.dump(2) + "\n");
  st.add_output("meanfield", jfile);

  st.invariants["meanfield"] = {{"ok", res.converged},
                                {"value", res.solution.root_value()},
                                {"iterations", res.iterations},
                                {"residual", res.residual}};
  return res.converged;
}

bool run_game(RunState& st) {
  Scenario sc = st.scenario.backend == Backend::Tree
                    ? st.scenario
                    : st.scenario.with_backend(Backend::Tree, st.scenario.n_paths, st.scenario.seed);
  const NoiseLattice lattice = sc.make_lattice();
  FixedPointOptions fp = st.cfg->fixed_point;
  fp.solver = st.cfg->solver;
  const MeanFieldValue mfv = mean_field_value_and_saddle(lattice, sc.coefficients, fp, {});

  bool equality_ok = true;
  bool ran_brute = false;
  GameValues gv;
  if (lattice.tree.n_nonterminal_nodes() <= 12) {
    const GameInstance gi = make_game_instance(lattice, sc.coefficients, mfv.fixed_point.flow,
                                               mfv.fixed_point.solution, st.cfg->solver);
    gv = brute_force_values(gi);
    ran_brute = true;
    equality_ok = std::abs(gv.upper - gv.lower) <= 1e-10 &&
                  std::abs(gv.backward_induction - mfv.value) <= 1e-10;
  }

  std::string csv = "quantity,value\n";
  csv += csv_join({"value", g17(mfv.value)});
  csv += csv_join({"worst_up", g17(mfv.report.worst_up)});
  csv += csv_join({"worst_down", g17(mfv.report.worst_down)});
  csv += csv_join({"holds", mfv.report.holds ? "true" : "false"});
  csv += csv_join({"exhaustive", mfv.report.exhaustive ? "true" : "false"});
  csv += csv_join({"rules_checked", std::to_string(mfv.report.n_checked)});
  if (ran_brute) {
    csv += csv_join({"upper", g17(gv.upper)});
    csv += csv_join({"lower", g17(gv.lower)});
    csv += csv_join({"backward_induction", g17(gv.backward_induction)});
  }
  const std::string file = "game_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("game", file);

  const bool ok = mfv.report.holds && equality_ok;
  st.invariants["game"] = {{"ok", ok},
                           {"value", mfv.value},
                           {"worst_up", mfv.report.worst_up},
                           {"worst_down", mfv.report.worst_down},
                           {"exhaustive", mfv.report.exhaustive},
                           {"minimax_checked", ran_brute}};
  if (!ok) st.note("game: saddle margins or minimax equality failed");
  return ok;
}

bool run_particles(RunState& st) {
  const Scenario& sc = st.scenario;
  const CoefficientSet& c = sc.coefficients;
  ParticleOptions popts;
  popts.n_paths = st.cfg->particles_paths;
  popts.tol = st.cfg->particles_tol;
  popts.max_outer = st.cfg->particles_max_outer;
  popts.damping = st.cfg->particles_damping;
  popts.solver = st.cfg->solver;
  const TerminalSampler sampler = terminal_from_coefficients(c);
  const std::uint64_t master = substream_seed(sc.seed, kParticleStream);

  const ParticleSystemSolution sys =
      solve_particle_system(st.cfg->particles_n, sc.grid, sc.jumps, c, sampler, master, popts);
  const ParticleSaddleReport saddles = particle_saddles(sys, c, {});

  std::vector<int> perm(sys.n);
  for (int i = 0; i < sys.n; ++i) perm[i] = sys.n - 1 - i;
  const ExchangeabilityReport exch =
      exchangeability_check(sys.n, sc.grid, sc.jumps, c, sampler, master, perm, popts);

  std::string csv = "particle,root,k1_total_mean,k2_total_mean,value,up_excess,down_excess\n";
  for (int i = 0; i < sys.n; ++i) {
    const DRBSDESolution& p = sys.particles[i];
    double k1 = 0.0, k2 = 0.0;
    const int S = static_cast<int>(p.Y[0].size());
    for (const auto& row : p.dK1)
      for (double v : row) k1 += v;
    for (const auto& row : p.dK2)
      for (double v : row) k2 += v;
    csv += csv_join({std::to_string(i), g17(p.root_value()), g17(k1 / S), g17(k2 / S),
                     g17(saddles.values[i]), g17(saddles.up_excess[i]),
                     g17(saddles.down_excess[i])});
  }
  const std::string file = "particles_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("particles", file);

  const bool ok = sys.converged && saddles.holds && exch.identical && exch.law_identical;
  json j = {{"n", sys.n},
            {"n_paths", st.cfg->particles_paths},
            {"damping", st.cfg->particles_damping},
            {"damped", st.cfg->particles_damping < 1.0},
            {"iterations", sys.iterations},
            {"residual", sys.residual},
            {"converged", sys.converged},
            {"saddles_hold", saddles.holds},
            {"worst_up_excess", saddles.worst_up_excess},
            {"worst_down_excess", saddles.worst_down_excess},
            {"exchangeable", exch.identical && exch.law_identical},
            {"ok", ok}};
  const std::string jfile = "particles_" + st.h8 + ".json";
  write_text(st.dir / jfile, j.dump(2) + "\n");
  st.add_output("particles", jfile);

  st.invariants["particles"] = j;
  if (!ok) st.note("particles: convergence, saddle or relabeling invariant failed");
  return ok;
}

bool run_chaos(RunState& st) {
  const Scenario& sc = st.scenario;
  const CoefficientSet& c = sc.coefficients;
  ChaosConfig ccfg;
  ccfg.grid = sc.grid;
  ccfg.jumps = sc.jumps;
  ccfg.n_paths = st.cfg->chaos_paths;
  ccfg.n_ref = st.cfg->chaos_n_ref;
  ccfg.ref_seed = substream_seed(sc.seed, kChaosRefStream);
  ccfg.particle.tol = st.cfg->particles_tol;
  ccfg.particle.max_outer = st.cfg->particles_max_outer;
  ccfg.particle.solver = st.cfg->solver;
  ccfg.fixed_point = st.cfg->fixed_point;
  ccfg.fixed_point.solver = st.cfg->solver;
  const TerminalSampler sampler = terminal_from_coefficients(c);

  const ChaosReport rep = chaos_gap_experiment(st.cfg->chaos_n_grid, c, sampler, ccfg,
                                               st.cfg->chaos_seeds);

  // Resampling-only law experiment against the same reference flow.
  const NoiseLattice ref_lattice =
      sample_paths(ccfg.grid, ccfg.jumps, ccfg.n_ref, substream_seed(ccfg.ref_seed, kLlnRefStream));
  const FixedPointResult ref = fixed_point(ref_lattice, c, ccfg.fixed_point);
  const std::vector<LlnRow> lln =
      lln_experiment(ref_lattice, ref.solution, c.p, st.cfg->chaos_n_grid, st.cfg->chaos_seeds);

  std::string csv = "n,seed,step,metric,value\n";
  for (const ChaosRow& row : rep.rows)
    csv += csv_join({std::to_string(row.n), std::to_string(row.seed), std::to_string(row.step),
                     row.metric, g17(row.value)});
  for (const LlnRow& row : lln) {
    csv += csv_join({std::to_string(row.n), "0", "-1", "lln", g17(row.estimate)});
    csv += csv_join({std::to_string(row.n), "0", "-1", "lln_se", g17(row.se)});
  }
  const std::string file = "chaos_" + st.h8 + ".csv";
  write_text(st.dir / file, csv);
  st.add_output("chaos", file);

  std::string plot = "n,metric,mean,se\n";
  for (const ChaosAggregate& a : rep.agg) {
    plot += csv_join({std::to_string(a.n), "y_gap", g17(a.g_mean), g17(a.g_se)});
    plot += csv_join({std::to_string(a.n), "law_gap", g17(a.what_mean), g17(a.what_se)});
    plot += csv_join({std::to_string(a.n), "w_gap", g17(a.wcomp_mean), g17(a.wcomp_se)});
    plot += csv_join({std::to_string(a.n), "joint2_gap", g17(a.marg2_mean), g17(a.marg2_se)});
  }
  const std::string pfile = "chaos_plot_" + st.h8 + ".csv";
  write_text(st.dir / pfile, plot);
  st.add_output("chaos", pfile);

  bool nonneg = true;
  for (const ChaosRow& row : rep.rows) nonneg = nonneg && row.value >= -1e-15;

  json j = {{"n_grid", rep.n_grid},
            {"seeds", rep.seeds},
            {"n_ref", rep.n_ref},
            {"n_paths", rep.n_paths},
            {"p", rep.p},
            {"exploratory", rep.exploratory},
            {"chaos_condition_lhs", rep.chaos_condition.lhs},
            {"g_monotone", rep.g_monotone},
            {"g_halved", rep.g_halved},
            {"law_monotone", rep.what_monotone},
            {"law_halved", rep.what_halved},
            {"joint2_decreasing", rep.marg2_decreasing},
            {"trend_ok", rep.trend_ok()},
            {"ok", nonneg}};
  const std::string jfile = "chaos_" + st.h8 + ".json";
  write_text(st.dir / jfile, j.dump(2) + "\n");
  st.add_output("chaos", jfile);

  st.invariants["chaos"] = j;
  if (!nonneg) st.note("chaos: a distance estimate came out negative");
  if (!rep.trend_ok()) st.note("chaos: convergence trend flags not all set (see JSON summary)");
  return nonneg;
}

}  // namespace

RunSummary run_experiments(const RunConfig& cfg, const std::string& out_dir_override,
                           const std::string& only) {
  RunState st;
  st.cfg = &cfg;
  st.scenario = resolve_scenario(cfg);
  try {
    st.scenario.make_lattice();  // surface bad lattice specs as config errors
  } catch (const std::exception& e) {
    throw ConfigError(error_name(e) + ": " + e.what());
  }

  const std::string canonical = canonical_config_text(cfg);
  st.h8 = config_hash8(canonical);
  st.dir = out_dir_override.empty() ? cfg.out_dir : out_dir_override;
  std::filesystem::create_directories(st.dir);
  st.summary.out_dir = st.dir.string();
  st.summary.config_hash = st.h8;

  std::vector<std::string> selected;
  if (!only.empty()) {
    if (std::find(experiment_order().begin(), experiment_order().end(), only) ==
        experiment_order().end())
      throw ConfigError("config: unknown experiment '" + only + "'");
    selected.push_back(only);
  } else {
    for (const std::string& name : experiment_order())
      if (std::find(cfg.experiments.begin(), cfg.experiments.end(), name) != cfg.experiments.end())
        selected.push_back(name);
  }

  const std::string started = utc_now();
  const std::string config_file = "config_" + st.h8 + ".json";
  write_text(st.dir / config_file, canonical);
  st.add_output("config", config_file);

  bool any_failed = false;
  bool no_convergence = false;
  for (const std::string& name : selected) {
    bool ok = false;
    try {
      if (name == "validate")
        ok = run_validate(st);
      else if (name == "solve")
        ok = run_solve(st);
      else if (name == "meanfield")
        ok = run_meanfield(st);
      else if (name == "game")
        ok = run_game(st);
      else if (name == "particles")
        ok = run_particles(st);
      else if (name == "chaos")
        ok = run_chaos(st);
    } catch (const NoConvergence& e) {
      st.note(name + ": NoConvergence: " + e.what());
      st.invariants[name] = {{"ok", false}, {"error", std::string("NoConvergence: ") + e.what()}};
      no_convergence = true;
    } catch (const std::exception& e) {
      st.note(name + ": " + error_name(e) + ": " + e.what());
      st.invariants[name] = {{"ok", false}, {"error", error_name(e) + ": " + e.what()}};
    }
    st.summary.invariants.push_back({name, ok});
    any_failed = any_failed || !ok;
  }

  st.summary.exit_code = no_convergence ? 4 : (any_failed ? 3 : 0);

  json manifest = {{"config_hash", st.h8},
                   {"tool_version", kVersion},
                   {"scenario", st.scenario.name},
                   {"started_utc", started},
                   {"finished_utc", utc_now()},
                   {"invariants", st.invariants},
                   {"messages", st.summary.messages},
                   {"exit_code", st.summary.exit_code}};
  json outs = json::array();
  for (const ExperimentOutput& o : st.summary.outputs)
    outs.push_back({{"experiment", o.experiment}, {"file", o.file}});
  manifest["outputs"] = outs;

  const std::string mfile = "manifest_" + st.h8 + ".json";
  write_text(st.dir / mfile, manifest.dump(2) + "\n");
  st.summary.manifest_file = (st.dir / mfile).string();
  return st.summary;
}

std::pair<int, std::vector<std::string>> validate_config(const RunConfig& cfg) {
  std::vector<std::string> lines;
  Scenario sc = resolve_scenario(cfg);
  NoiseLattice lattice;
  try {
    lattice = sc.make_lattice();
  } catch (const std::exception& e) {
    throw ConfigError(error_name(e) + ": " + e.what());
  }
  const ValidationReport report =
      validate_assumptions(sc.coefficients, lattice, cfg.validate_probes, sc.seed);
  const ConditionCheck contraction = check_contraction_condition(sc.coefficients);
  const ConditionCheck chaos = check_chaos_condition(sc.coefficients);

  lines.push_back("scenario: " + sc.name);
  for (const CheckResult& ck : report.checks)
    lines.push_back((ck.pass ? "pass  " : "FAIL  ") + ck.name + "  measured=" + g17(ck.measured) +
                    " allowed=" + g17(ck.allowed) + (ck.witness.empty() ? "" : "  " + ck.witness));
  lines.push_back(std::string(contraction.holds ? "pass  " : "FAIL  ") +
                  "contraction_condition  lhs=" + g17(contraction.lhs) +
                  " threshold=" + g17(contraction.threshold));
  lines.push_back(std::string(chaos.holds ? "pass  " : "info  ") +
                  "chaos_condition  lhs=" + g17(chaos.lhs) + " threshold=" + g17(chaos.threshold));

  const bool ok = report.all_pass() && contraction.holds;
  lines.push_back(ok ? "all hard checks passed" : "hard checks FAILED");
  return {ok ? 0 : 3, lines};
}

}  // namespace mfdyn
