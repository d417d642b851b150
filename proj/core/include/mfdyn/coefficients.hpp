#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfdyn/lattice.hpp"
#include "mfdyn/measure.hpp"

namespace mfdyn {

using DriverFn =
    std::function<double(double t, double y, double z, double u_agg, const MeasureSlice& mu)>;
using ObstacleFn = std::function<double(double t, double y, const MeasureSlice& mu)>;
using BoundFn = std::function<double(double t, const LatticeState& st)>;
using TerminalFn = std::function<double(const LatticeState& st)>;

// Problem data: driver, obstacle cores with floor/cap processes, terminal
// map, and declared Lipschitz metadata. The effective obstacles are
// h1 = h1_core /\ S and h2 = h2_core \/ S'; with S <= S' this forces
// h1 <= S <= S' <= h2 everywhere, which is what makes the pair admissible.
struct CoefficientSet {
  DriverFn f;
  ObstacleFn h1_core;  // upper-capped by S
  ObstacleFn h2_core;  // lower-floored by S'
  BoundFn S;           // floor/cap processes, deterministic in (t, state)
  BoundFn Sp;
  TerminalFn xi;

  double C_f = 0.0;
  double gamma1 = 0.0, gamma2 = 0.0;  // h1_core Lipschitz in (y, mu)
  double kappa1 = 0.0, kappa2 = 0.0;  // h2_core Lipschitz in (y, mu)
  double p = 2.0;
  bool comparison_ok = true;  // declared, not verified numerically

  // Probe radius used by validation when sampling (y, mu) arguments.
  double probe_radius = 5.0;

  double h1(double t, double y, const LatticeState& st, const MeasureSlice& mu) const {
    return std::min(h1_core(t, y, mu), S(t, st));
  }
  double h2(double t, double y, const LatticeState& st, const MeasureSlice& mu) const {
    return std::max(h2_core(t, y, mu), Sp(t, st));
  }

  double lipschitz_sum_pow() const;  // gamma1^p + gamma2^p + kappa1^p + kappa2^p
};

struct CheckResult {
  std::string name;
  bool pass = true;
  double measured = 0.0;
  double allowed = 0.0;
  std::string witness;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_pass() const;
  const CheckResult* find(const std::string& name) const;
  std::string summary() const;
};

// Randomized audit of the declared structure: floor/cap ordering on every
// lattice node, obstacle ordering and empirical Lipschitz ratios on sampled
// probes, terminal sandwich on all terminal states. Deterministic in seed.
ValidationReport validate_assumptions(const CoefficientSet& c, const NoiseLattice& lattice,
                                      int probe_count, std::uint64_t seed);

// Life-insurance prospective-reserve scenario. The driver charges premiums
// and fees against the reserve and adds a shortfall penalty relative to the
// portfolio mean; the stop payoffs are surrender value (capped by S) and
// termination cost (floored by S').
struct InsuranceScenario {
  std::function<double(double)> alpha;  // premium inflow rate
  std::function<double(double)> beta;   // shortfall penalty rate
  std::function<double(double)> theta;  // shortfall penalty floor
  std::function<double(double)> delta;  // fee rate on the reserve

  double guarantee = 1.0;        // u
  double bonus_fraction = 0.15;  // in (0, 1)

  std::function<double(double)> c1;  // surrender fee, of y
  std::function<double(double)> c2;  // termination cost, of y
  std::function<double(double)> c3;  // collective adjustment, of mean
  double c1_lip = 0.15, c2_lip = 0.15, c3_lip = 0.15;

  BoundFn floor_s;   // S
  BoundFn cap_s;     // S'
  TerminalFn terminal;

  double p = 2.0;
  double horizon_hint = 1.0;  // range over which time-dependent rates are scanned

  static InsuranceScenario defaults();
};

CoefficientSet make_insurance_scenario(const InsuranceScenario& params);

}  // namespace mfdyn
