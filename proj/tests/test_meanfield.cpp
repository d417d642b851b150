#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mfdyn/meanfield.hpp"
#include "mfdyn/scenarios.hpp"

using namespace mfdyn;
using mfdyn::testing::random_instance;

TEST_CASE("law-independent instances converge in one effective pass") {
  const Scenario* sc = find_scenario("binding_lower");
  REQUIRE(sc != nullptr);
  const FixedPointResult res = fixed_point(sc->make_lattice(), sc->coefficients);
  CHECK(res.converged);
  CHECK(res.iterations == 2);  // second sweep certifies the first
  CHECK(res.residual == 0.0);
  CHECK(res.solution.Y[0][0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("self-consistent floor lifts the value") {
  // One step, zero driver, terminal mean zero, low payoff 0.5 + 0.1 * mean:
  // the fixed point solves v = 0.5 + 0.1 v at the root.
  CoefficientSet c = testing::plain_set();
  c.h1_core = [](double, double, const MeasureSlice& mu) { return 0.5 + 0.1 * mu.mean(); };
  c.S = [](double t, const LatticeState&) { return t < 0.5 ? 100.0 : -100.0; };
  c.gamma2 = 0.1;
  const NoiseLattice lat = build_tree(TimeGrid{1.0, 1}, {});
  const FixedPointResult res = fixed_point(lat, c);
  CHECK(res.converged);
  CHECK(res.solution.Y[0][0] == doctest::Approx(5.0 / 9.0).epsilon(1e-8));
}

TEST_CASE("discrete exponential from mean-coupled driver") {
  Scenario sc = *find_scenario("mean_ode");
  sc.grid.steps = 64;
  const NoiseLattice lat = sc.make_lattice();
  const FixedPointResult res = fixed_point(lat, sc.coefficients);
  REQUIRE(res.converged);
  // terminal mass c0, driver = mean: value = c0 * (1 - dt)^(-M).
  const double c0 = sc.coefficients.xi(lat.tree.levels[64][0].state);
  const double exact_discrete = c0 * std::pow(1.0 - 1.0 / 64.0, -64.0);
  CHECK(res.solution.Y[0][0] == doctest::Approx(exact_discrete).epsilon(1e-6));
  const double continuum = c0 * std::exp(1.0);
  CHECK(std::abs(res.solution.Y[0][0] - continuum) / std::abs(continuum) < 0.05);
}

TEST_CASE("halving the step roughly halves the exponential error") {
  Scenario sc = *find_scenario("mean_ode");
  auto value_at = [&](int steps) {
    Scenario s2 = sc;
    s2.grid.steps = steps;
    return fixed_point(s2.make_lattice(), s2.coefficients).solution.Y[0][0];
  };
  const double c0 = sc.coefficients.xi(LatticeState{0.0, {}});
  const double target = c0 * std::exp(1.0);
  const double e64 = std::abs(value_at(64) - target);
  const double e128 = std::abs(value_at(128) - target);
  const double ratio = e64 / e128;
  CHECK(ratio > 2.0 / 1.5);
  CHECK(ratio < 2.0 * 1.5);
}

TEST_CASE("operator application reports the solved flow") {
  Rng rng(911);
  const auto ri = random_instance(rng, 3, false);
  const NoiseLattice lat = ri.tree();
  const MeasureFlow flow = MeasureFlow::dirac(0.0, 3);
  const PsiResult psi = apply_psi(lat, ri.c, flow);
  REQUIRE(psi.flow.n_slices() == 4);
  for (int m = 0; m <= 3; ++m) {
    const MeasureSlice ref = law_from_solution(lat, psi.solution, m);
    CHECK(wasserstein_p_pow(psi.flow.at(m), ref, 2.0) == doctest::Approx(0.0));
  }
}

TEST_CASE("fixed point is initialization independent") {
  Rng rng(912);
  const auto ri = random_instance(rng, 3, true, 0.3);
  const NoiseLattice lat = ri.tree();
  FixedPointOptions a;
  a.tol = 1e-11;
  FixedPointOptions b = a;
  b.init_value = 1.5;
  FixedPointOptions c = a;
  c.init_value = -2.0;
  const double va = fixed_point(lat, ri.c, a).solution.Y[0][0];
  const double vb = fixed_point(lat, ri.c, b).solution.Y[0][0];
  const double vc = fixed_point(lat, ri.c, c).solution.Y[0][0];
  CHECK(std::abs(va - vb) <= 2.0 * a.tol);
  CHECK(std::abs(va - vc) <= 2.0 * a.tol);
}

TEST_CASE("residual history decays geometrically under coupling") {
  Rng rng(913);
  const auto ri = random_instance(rng, 3, false, 0.4);
  const FixedPointResult res = fixed_point(ri.tree(), ri.c);
  REQUIRE(res.converged);
  REQUIRE(res.history.size() >= 4);
  for (std::size_t k = res.history.size() - 3; k + 1 < res.history.size(); ++k) {
    if (res.history[k] == 0.0) continue;
    CHECK(res.history[k + 1] / res.history[k] < 1.0);
  }
}

TEST_CASE("windowed pasting agrees with the global iteration") {
  Rng rng(914);
  const auto ri = random_instance(rng, 4, false, 0.25);
  const NoiseLattice lat = ri.tree();
  FixedPointOptions global;
  global.tol = 1e-11;
  FixedPointOptions windowed = global;
  windowed.mode = FixedPointMode::WindowedPasting;
  windowed.window_steps = 2;
  const FixedPointResult g = fixed_point(lat, ri.c, global);
  const FixedPointResult w = fixed_point(lat, ri.c, windowed);
  REQUIRE(g.converged);
  REQUIRE(w.converged);
  CHECK(w.solution.Y[0][0] == doctest::Approx(g.solution.Y[0][0]).epsilon(1e-7));
}

TEST_CASE("nonconvergence is reported, not silently returned") {
  Rng rng(915);
  const auto ri = random_instance(rng, 2, false, 0.4);
  FixedPointOptions opts;
  opts.max_iter = 2;
  opts.tol = 1e-16;
  CHECK_THROWS_AS(fixed_point(ri.tree(), ri.c, opts), NoConvergence);
}

TEST_CASE("value with saddle rules on the tree") {
  Rng rng(916);
  const auto ri = random_instance(rng, 3, true);
  const MeanFieldValue mfv = mean_field_value_and_saddle(ri.tree(), ri.c);
  CHECK(mfv.verified);
  CHECK(mfv.report.holds);
  CHECK(mfv.value == doctest::Approx(mfv.fixed_point.solution.Y[0][0]));
  // The stop rules trigger exactly on the payoff bands of the solution.
  const NoiseLattice lat = ri.tree();
  const int M = lat.grid.steps;
  for (int m = 0; m < M; ++m)
    for (std::size_t i = 0; i < mfv.saddle.tau.stop[m].size(); ++i) {
      const double t = lat.grid.time(m);
      const double y = mfv.fixed_point.solution.Y[m][i];
      const LatticeState& st = lat.tree.levels[m][i].state;
      const double h1 = ri.c.h1(t, y, st, mfv.fixed_point.flow.at(m));
      const double h2 = ri.c.h2(t, y, st, mfv.fixed_point.flow.at(m));
      CHECK(static_cast<bool>(mfv.saddle.tau.stop[m][i]) == (y <= h1 + 1e-9));
      CHECK(static_cast<bool>(mfv.saddle.sigma.stop[m][i]) == (y >= h2 - 1e-9));
    }
}
