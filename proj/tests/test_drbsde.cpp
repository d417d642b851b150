#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "mfdyn/drbsde.hpp"
#include "mfdyn/meanfield.hpp"

using namespace mfdyn;
using mfdyn::testing::binding_lower_instance;
using mfdyn::testing::plain_set;
using mfdyn::testing::random_instance;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double max_skorokhod_violation(const NoiseLattice& lattice, const CoefficientSet& c,
                               const MeasureFlow& flow, const DRBSDESolution& sol) {
  double worst = 0.0;
  for (int m = 0; m < lattice.grid.steps; ++m) {
    const double t = lattice.grid.time(m);
    for (std::size_t i = 0; i < sol.Y[m].size(); ++i) {
      const LatticeState st = lattice.backend == Backend::Tree ? lattice.tree.levels[m][i].state
                                                               : lattice.path_state(i, m);
      const double y = sol.Y[m][i];
      worst = std::max(worst, sol.dK1[m][i] * std::abs(y - c.h1(t, y, st, flow.at(m))));
      worst = std::max(worst, sol.dK2[m][i] * std::abs(c.h2(t, y, st, flow.at(m)) - y));
      worst = std::max(worst, std::min(sol.dK1[m][i], sol.dK2[m][i]));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("binding lower obstacle at the root") {
  const auto ri = binding_lower_instance();
  const NoiseLattice lat = ri.tree();
  const MeasureFlow flow = MeasureFlow::dirac(0.0, 1);
  const DRBSDESolution sol = solve_frozen(lat, ri.c, flow);
  CHECK(sol.Y[0][0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sol.dK1[0][0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sol.dK2[0][0] == doctest::Approx(0.0));
  // Unreflected solve keeps the plain conditional expectation.
  SolverOptions plain;
  plain.reflected = false;
  CHECK(solve_frozen(lat, ri.c, flow, plain).Y[0][0] == doctest::Approx(0.0));
}

TEST_CASE("binding upper obstacle from a positive driver") {
  CoefficientSet c = plain_set(0.0, 0.0, 0.0);  // terminal identically 0
  c.f = [](double, double, double, double, const MeasureSlice&) { return 1.0; };
  c.h2_core = [](double t, double, const MeasureSlice&) { return t < 0.5 ? 0.8 : 50.0; };
  c.Sp = [](double, const LatticeState&) { return 0.0; };  // keep the cap below the core
  const NoiseLattice lat = build_tree(TimeGrid{1.0, 1}, {});
  const DRBSDESolution sol = solve_frozen(lat, c, MeasureFlow::dirac(0.0, 1));
  CHECK(sol.Y[0][0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(sol.dK2[0][0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(sol.dK1[0][0] == 0.0);
}

TEST_CASE("implicit clamp solves an obstacle that moves with the value") {
  CoefficientSet c = plain_set();
  c.h1_core = [](double, double y, const MeasureSlice&) { return 0.5 + 0.1 * y; };
  c.S = [](double, const LatticeState&) { return 100.0; };  // do not cap the core
  const ClampResult r = clamp_implicit(0.0, 0.0, 0.0, 0.0, 0.5, MeasureSlice::dirac(0.0),
                                       LatticeState{0.0, {}}, c);
  CHECK(r.y == doctest::Approx(5.0 / 9.0).epsilon(1e-10));
  CHECK(r.dk1 == doctest::Approx(5.0 / 9.0).epsilon(1e-10));
}

TEST_CASE("skorokhod conditions hold on random trees") {
  Rng rng(101);
  for (int rep = 0; rep < 12; ++rep) {
    const auto ri = random_instance(rng, 2 + rep % 3, rep % 2 == 1);
    const NoiseLattice lat = ri.tree();
    const MeasureFlow flow = MeasureFlow::dirac(0.2, lat.grid.steps);
    const DRBSDESolution sol = solve_frozen(lat, ri.c, flow);
    CHECK(max_skorokhod_violation(lat, ri.c, flow, sol) <= 1e-10);
    // The value stays inside the payoff band everywhere.
    for (int m = 0; m < lat.grid.steps; ++m)
      for (std::size_t i = 0; i < sol.Y[m].size(); ++i) {
        const double t = lat.grid.time(m);
        const double y = sol.Y[m][i];
        const LatticeState& st = lat.tree.levels[m][i].state;
        CHECK(y >= ri.c.h1(t, y, st, flow.at(m)) - 1e-10);
        CHECK(y <= ri.c.h2(t, y, st, flow.at(m)) + 1e-10);
      }
  }
}

TEST_CASE("windowed solve pastes to the full solve on trees") {
  Rng rng(33);
  const auto ri = random_instance(rng, 4, true);
  const NoiseLattice lat = ri.tree();
  const int M = lat.grid.steps;
  const MeasureFlow flow = MeasureFlow::dirac(-0.1, M);
  const DRBSDESolution full = solve_frozen(lat, ri.c, flow);

  const DRBSDESolution upper = solve_frozen_window(lat, ri.c, flow, 2, M, full.Y[M]);
  const DRBSDESolution lower = solve_frozen_window(lat, ri.c, flow, 0, 2, upper.Y[0]);
  REQUIRE(upper.first_step == 2);
  for (std::size_t i = 0; i < full.Y[0].size(); ++i)
    CHECK(lower.Y[0][i] == doctest::Approx(full.Y[0][i]).epsilon(1e-13));
  for (std::size_t i = 0; i < full.Y[3].size(); ++i)
    CHECK(upper.values_at(3)[i] == doctest::Approx(full.Y[3][i]).epsilon(1e-13));
}

TEST_CASE("terminal outside the band is rejected") {
  auto ri = binding_lower_instance();
  ri.c.xi = [](const LatticeState&) { return 20.0; };  // above the cap of 10
  CHECK_THROWS_AS(solve_frozen(ri.tree(), ri.c, MeasureFlow::dirac(0.0, 1)), InvalidTerminal);
}

TEST_CASE("stopped-payoff expectation with no interior stop matches the plain solve") {
  Rng rng(7);
  const auto ri = random_instance(rng, 3, true);
  const NoiseLattice lat = ri.tree();
  const int M = lat.grid.steps;
  const MeasureFlow flow = MeasureFlow::dirac(0.0, M);

  std::vector<std::vector<double>> table(M + 1);
  for (int m = 0; m < M; ++m) table[m].assign(lat.tree.levels[m].size(), kNaN);
  table[M].resize(lat.tree.levels[M].size());
  for (std::size_t i = 0; i < table[M].size(); ++i)
    table[M][i] = ri.c.xi(lat.tree.levels[M][i].state);

  SolverOptions plain;
  plain.reflected = false;
  const DRBSDESolution ref = solve_frozen(lat, ri.c, flow, plain);
  const auto value = f_expectation(lat, ri.c, BroadcastFlow(flow), table);
  for (int m = 0; m <= M; ++m)
    for (std::size_t i = 0; i < value[m].size(); ++i)
      CHECK(value[m][i] == doctest::Approx(ref.Y[m][i]).epsilon(1e-12));
}

TEST_CASE("stopped-payoff expectation freezes stopped nodes") {
  const auto ri = binding_lower_instance();
  const NoiseLattice lat = ri.tree();
  std::vector<std::vector<double>> table = {{0.5}, {1.0, -1.0}};
  const auto value = f_expectation(lat, ri.c, BroadcastFlow(MeasureFlow::dirac(0.0, 1)), table);
  CHECK(value[0][0] == 0.5);  // stop payoff pinned, no recursion applied
}

TEST_CASE("path and tree backends agree on a smooth instance") {
  Rng rng(71);
  auto ri = random_instance(rng, 4, false);
  const MeasureFlow flow = MeasureFlow::dirac(0.1, 4);
  const DRBSDESolution tree_sol = solve_frozen(ri.tree(), ri.c, flow);
  const NoiseLattice paths = sample_paths(ri.grid, ri.jumps, 4096, 12345);
  const DRBSDESolution path_sol = solve_frozen(paths, ri.c, flow);
  CHECK(path_sol.root_value() ==
        doctest::Approx(tree_sol.root_value()).epsilon(0.05).scale(1.0));
}

TEST_CASE("path backend is deterministic in the seed") {
  Rng rng(72);
  const auto ri = random_instance(rng, 3, true);
  const NoiseLattice a = sample_paths(ri.grid, ri.jumps, 128, 555);
  const NoiseLattice b = sample_paths(ri.grid, ri.jumps, 128, 555);
  const MeasureFlow flow = MeasureFlow::dirac(0.0, 3);
  const DRBSDESolution sa = solve_frozen(a, ri.c, flow);
  const DRBSDESolution sb = solve_frozen(b, ri.c, flow);
  CHECK(sa.Y == sb.Y);
  CHECK(sa.Z == sb.Z);
  CHECK(sa.dK1 == sb.dK1);
  CHECK(sa.dK2 == sb.dK2);
}

TEST_CASE("snell envelope dominates the payoff and is a supermartingale") {
  Rng rng(88);
  const auto ri = random_instance(rng, 4, false);
  const NoiseLattice lat = ri.tree();
  const Tree& tree = lat.tree;
  std::vector<std::vector<double>> x(tree.n_levels());
  for (int m = 0; m < tree.n_levels(); ++m) {
    x[m].resize(tree.n_nodes(m));
    for (int i = 0; i < tree.n_nodes(m); ++i)
      x[m][i] = std::sin(3.0 * tree.levels[m][i].state.b) + 0.1 * m;
  }
  const auto env = snell_envelope(tree, x);
  for (int m = 0; m < tree.n_levels(); ++m)
    for (int i = 0; i < tree.n_nodes(m); ++i) CHECK(env[m][i] >= x[m][i] - 1e-14);
  for (int m = 0; m + 1 < tree.n_levels(); ++m)
    for (int i = 0; i < tree.n_nodes(m); ++i) {
      double cont = 0.0;
      for (const Branch& br : tree.levels[m][i].branches) cont += br.prob * env[m + 1][br.child];
      CHECK(env[m][i] >= cont - 1e-12);
      CHECK(env[m][i] == doctest::Approx(std::max(x[m][i], cont)).epsilon(1e-12));
    }
}

TEST_CASE("stability estimate holds on small trees") {
  Rng rng(202);
  for (int rep = 0; rep < 6; ++rep) {
    const auto r1 = random_instance(rng, 3, rep % 2 == 0);
    auto r2 = r1;
    r2.params.a0 = r1.params.a0 + 0.3;
    r2.params.ay = r1.params.ay * 0.5;
    r2.params.x0 = r1.params.x0 + 0.2;
    r2.c = r2.params.build();
    const NoiseLattice lat = r1.tree();
    const MeasureFlow flow = MeasureFlow::dirac(0.0, 3);

    const double lip = std::max(r1.c.C_f, 0.25);
    EstimateParams ep;
    ep.p = 2.0;
    ep.eta = 1.0 / (lip * lip);
    ep.beta = 2.0 * lip + 3.0 / ep.eta + 0.1;
    const double slack = 6.0 * lat.grid.dt();
    const AprioriReport rep_out = check_apriori_estimate(lat, r1.c, r2.c, flow, ep, slack);
    INFO("worst gap ", rep_out.worst_gap, " at step ", rep_out.worst_step);
    CHECK(rep_out.holds);
  }
}

TEST_CASE("estimate parameter guards") {
  EstimateParams ep;
  ep.p = 2.0;
  ep.eta = 100.0;  // far above 1/lip^2
  ep.beta = 1.0;
  CHECK_THROWS_AS(ep.validate(1.0), InvalidParam);
  EstimateParams ok;
  ok.p = 2.0;
  ok.eta = 1.0;
  ok.beta = 5.1;
  CHECK_NOTHROW(ok.validate(1.0));
}

TEST_CASE("push moment bounds hold on random trees") {
  Rng rng(303);
  for (int rep = 0; rep < 6; ++rep) {
    const auto ri = random_instance(rng, 3, rep % 2 == 1);
    const NoiseLattice lat = ri.tree();
    const MeasureFlow flow = MeasureFlow::dirac(0.0, 3);
    const DRBSDESolution sol = solve_frozen(lat, ri.c, flow);
    const KBoundReport kb = check_k_bound(lat, ri.c, flow, sol);
    CHECK(kb.holds1);
    CHECK(kb.holds2);
    CHECK(kb.bound1 >= kb.k1_moment);
    CHECK(kb.bound2 >= kb.k2_moment);
  }
}
