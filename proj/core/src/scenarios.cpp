#include "mfdyn/scenarios.hpp"

#include <algorithm>
#include <cmath>

namespace mfdyn {

NoiseLattice Scenario::make_lattice() const {
  if (backend == Backend::Tree) return build_tree(grid, jumps);
  return sample_paths(grid, jumps, n_paths, seed);
}

Scenario Scenario::with_backend(Backend b, int np, std::uint64_t sd) const {
  Scenario s = *this;
  s.backend = b;
  s.n_paths = np;
  s.seed = sd;
  return s;
}

namespace {

CoefficientSet wide_obstacles(double lo, double hi, double floor_v, double cap_v) {
  CoefficientSet c;
  c.f = [](double, double, double, double, const MeasureSlice&) { return 0.0; };
  c.h1_core = [lo](double, double, const MeasureSlice&) { return lo; };
  c.h2_core = [hi](double, double, const MeasureSlice&) { return hi; };
  c.S = [floor_v](double, const LatticeState&) { return floor_v; };
  c.Sp = [cap_v](double, const LatticeState&) { return cap_v; };
  c.xi = [](const LatticeState&) { return 0.0; };
  return c;
}

Scenario make_trivial() {
  Scenario s;
  s.name = "trivial";
  s.description = "zero driver, far-away stop payoffs; value is the terminal mean";
  s.grid = {1.0, 8};
  s.backend = Backend::Tree;
  s.coefficients = wide_obstacles(-10.0, 10.0, -5.0, 5.0);
  s.coefficients.xi = [](const LatticeState& st) { return st.b; };
  return s;
}

Scenario make_binding_lower() {
  Scenario s;
  s.name = "binding_lower";
  s.description = "one step, zero driver, surrender floor above the continuation value";
  s.grid = {1.0, 1};
  s.backend = Backend::Tree;
  CoefficientSet c;
  c.f = [](double, double, double, double, const MeasureSlice&) { return 0.0; };
  c.h1_core = [](double, double, const MeasureSlice&) { return 1000.0; };
  c.h2_core = [](double, double, const MeasureSlice&) { return 10.0; };
  // Floor pays 0.5 before the horizon and drops out of the way at it.
  c.S = [](double t, const LatticeState&) { return t < 1.0 ? 0.5 : -1.0; };
  c.Sp = [](double, const LatticeState&) { return 1.0; };
  c.xi = [](const LatticeState& st) { return st.b; };  // +-1 at one step
  s.coefficients = c;
  return s;
}

Scenario make_mean_ode() {
  Scenario s;
  s.name = "mean_ode";
  s.description = "driver equals the law mean; the fixed point is a discrete exponential";
  s.grid = {1.0, 64};
  s.backend = Backend::Tree;
  CoefficientSet c = wide_obstacles(-1e9, 1e9, -1e9, 1e9);
  c.f = [](double, double, double, double, const MeasureSlice& mu) { return mu.mean(); };
  c.xi = [](const LatticeState&) { return 1.0; };
  c.C_f = 1.0;
  s.coefficients = c;
  return s;
}

Scenario make_insurance() {
  Scenario s;
  s.name = "insurance";
  s.description = "prospective reserve with surrender floor, termination cap, and claim shocks";
  s.grid = {1.0, 8};
  s.jumps.marks = {1.0};
  s.jumps.intensities = {0.3};
  s.backend = Backend::Tree;
  s.coefficients = make_insurance_scenario(InsuranceScenario::defaults());
  return s;
}

Scenario make_chaos_meanfield() {
  Scenario s;
  s.name = "chaos_meanfield";
  s.description = "mean-reverting driver coupled to the law mean, for interacting-system studies";
  s.grid = {1.0, 8};
  s.backend = Backend::Paths;
  s.n_paths = 512;
  s.seed = 0x5eedULL;
  CoefficientSet c;
  c.f = [](double, double y, double, double, const MeasureSlice& mu) {
    return -0.2 * y + 0.4 * mu.mean();
  };
  c.h1_core = [](double, double y, const MeasureSlice& mu) {
    return -0.65 + 0.1 * std::tanh(y) + 0.1 * std::tanh(mu.mean());
  };
  c.h2_core = [](double, double y, const MeasureSlice& mu) {
    return 0.65 + 0.1 * std::tanh(y) + 0.1 * std::tanh(mu.mean());
  };
  c.S = [](double, const LatticeState&) { return -0.55; };
  c.Sp = [](double, const LatticeState&) { return 0.55; };
  c.xi = [](const LatticeState& st) { return std::clamp(st.b, -0.5, 0.5); };
  c.C_f = 0.6;
  c.gamma1 = c.gamma2 = c.kappa1 = c.kappa2 = 0.1;
  c.probe_radius = 2.0;
  s.coefficients = c;
  return s;
}

}  // namespace

const std::vector<Scenario>& builtin_scenarios() {
  static const std::vector<Scenario> all = {
      make_trivial(),  make_binding_lower(),   make_mean_ode(),
      make_insurance(), make_chaos_meanfield(),
  };
  return all;
}

const Scenario* find_scenario(const std::string& name) {
  for (const Scenario& s : builtin_scenarios())
    if (s.name == name) return &s;
  return nullptr;
}

std::vector<std::string> scenario_names() {
  std::vector<std::string> out;
  for (const Scenario& s : builtin_scenarios()) out.push_back(s.name);
  return out;
}

}  // namespace mfdyn
