#pragma once

// Shared fixture builders for the test suite and the acceptance runner.
#include <cmath>
#include <cstdint>
#include <vector>

#include "mfdyn/coefficients.hpp"
#include "mfdyn/experiment.hpp"
#include "mfdyn/lattice.hpp"
#include "mfdyn/measure.hpp"
#include "mfdyn/rng.hpp"

namespace mfdyn::testing {

// Constant-everything instance: zero driver unless overridden, obstacles
// pushed far away, terminal = x0 + xb b + xj (total jumps) clamped.
inline CoefficientSet plain_set(double x0 = 0.0, double xb = 1.0, double xj = 0.0) {
  InlineCoefficients ic;
  ic.b0 = -50.0;
  ic.c0 = 50.0;
  ic.floor_s = -100.0;
  ic.cap_s = 100.0;
  ic.x0 = x0;
  ic.xb = xb;
  ic.xj = xj;
  ic.xlo = -99.0;
  ic.xhi = 99.0;
  return ic.build();
}

struct RandomInstance {
  InlineCoefficients params;
  CoefficientSet c;
  TimeGrid grid;
  JumpSpec jumps;

  NoiseLattice tree() const { return build_tree(grid, jumps); }
};

// Admissible-by-construction randomized instance: constant floor/cap bands
// sandwich the clamped terminal, tanh couplings keep declared Lipschitz
// constants exact, and coupling sizes respect the contraction condition.
inline RandomInstance random_instance(Rng& rng, int steps, bool with_jumps,
                                      double coupling_scale = 0.15) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.u01(); };
  RandomInstance ri;
  InlineCoefficients& ic = ri.params;

  const double s_lo = u(-2.5, -1.5);
  const double s_hi = u(1.5, 2.5);
  ic.floor_s = s_lo;
  ic.cap_s = s_hi;

  ic.a0 = u(-1.0, 1.0);
  ic.ay = u(-0.4, 0.4);
  ic.az = u(-0.3, 0.3);
  ic.au = with_jumps ? u(-0.3, 0.3) : 0.0;
  ic.am = u(-0.4, 0.4);

  ic.b0 = u(-0.6, 0.2);
  ic.by = u(-coupling_scale, coupling_scale);
  ic.bm = u(-coupling_scale, coupling_scale);
  ic.c0 = u(0.2, 1.0);
  ic.cy = u(-coupling_scale, coupling_scale);
  ic.cm = u(-coupling_scale, coupling_scale);

  ic.x0 = u(-0.8, 0.8);
  ic.xb = u(-0.5, 0.5);
  ic.xj = with_jumps ? u(-0.3, 0.3) : 0.0;
  ic.xlo = s_lo + 0.1;
  ic.xhi = s_hi - 0.1;
  ic.p = 2.0;

  ri.c = ic.build();
  ri.grid = TimeGrid{u(0.6, 1.4), steps};
  if (with_jumps) {
    ri.jumps.marks = {u(0.5, 1.5)};
    ri.jumps.intensities = {u(0.1, 0.5)};
  }
  return ri;
}

// One-step instance with a binding lower obstacle at the root: zero driver,
// terminal +-1, low payoff 0.5 before the horizon (dropped at the horizon so
// the terminal sandwich holds). Value 0.5, low push 0.5 at the root.
inline RandomInstance binding_lower_instance() {
  RandomInstance ri;
  CoefficientSet& c = ri.c;
  c.f = [](double, double, double, double, const MeasureSlice&) { return 0.0; };
  c.h1_core = [](double, double, const MeasureSlice&) { return 0.5; };
  c.h2_core = [](double, double, const MeasureSlice&) { return 10.0; };
  c.S = [](double t, const LatticeState&) { return t < 0.5 ? 0.5 : -10.0; };
  c.Sp = [](double, const LatticeState&) { return 10.0; };
  c.xi = [](const LatticeState& st) { return st.b > 0 ? 1.0 : -1.0; };
  ri.grid = TimeGrid{1.0, 1};
  return ri;
}

}  // namespace mfdyn::testing
