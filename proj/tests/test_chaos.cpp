#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mfdyn/chaos.hpp"
#include "mfdyn/scenarios.hpp"

using namespace mfdyn;

TEST_CASE("frozen-law copies reuse the interacting run's noise") {
  Rng rng(41);
  auto ri = testing::random_instance(rng, 3, false, 0.1);
  ri.params.am = 0.3;
  ri.c = ri.params.build();
  ParticleOptions opts;
  opts.n_paths = 64;
  opts.tol = 1e-10;
  const ParticleSystemSolution sys = solve_particle_system(
      3, ri.grid, ri.jumps, ri.c, terminal_from_coefficients(ri.c), 17, opts);
  REQUIRE(sys.converged);

  const FixedPointResult mf = fixed_point(ri.tree(), ri.c, FixedPointOptions{});
  const std::vector<DRBSDESolution> copies = iid_copies(mf.flow, sys, ri.c, opts.solver);
  REQUIRE(copies.size() == 3);
  for (int i = 0; i < 3; ++i) {
    // Same terminal draws, same path count, but the law differs, so the
    // tables agree only approximately.
    CHECK(copies[i].Y.back() == sys.particles[i].Y.back());
    CHECK(copies[i].Y[0].size() == sys.particles[i].Y[0].size());
    double gap = 0.0;
    for (std::size_t s = 0; s < copies[i].Y[0].size(); ++s)
      gap = std::max(gap, std::abs(copies[i].Y[0][s] - sys.particles[i].Y[0][s]));
    CHECK(gap < 0.5);
  }
}

TEST_CASE("empirical-law distance to the reference shrinks along the n-grid") {
  const Scenario* sc = find_scenario("chaos_meanfield");
  REQUIRE(sc != nullptr);
  const NoiseLattice lat = sc->with_backend(Backend::Paths, 2048, 5).make_lattice();
  const FixedPointResult mf = fixed_point(lat, sc->coefficients, FixedPointOptions{});
  const DRBSDESolution ref = solve_frozen(lat, sc->coefficients, mf.flow);

  const std::vector<int> grid{4, 16, 64, 256};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6};
  const std::vector<LlnRow> rows = lln_experiment(lat, ref, 2.0, grid, seeds);
  REQUIRE(rows.size() == grid.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].n == grid[i]);
    CHECK(rows[i].estimate >= 0.0);
    CHECK(rows[i].se >= 0.0);
    if (i > 0) CHECK(rows[i].estimate <= rows[i - 1].estimate + 2.0 * rows[i - 1].se);
  }
  CHECK(rows.back().estimate <= 0.25 * rows.front().estimate);
}

TEST_CASE("resampling the whole reference ensemble reproduces it") {
  const Scenario* sc = find_scenario("chaos_meanfield");
  const NoiseLattice lat = sc->with_backend(Backend::Paths, 256, 5).make_lattice();
  const FixedPointResult mf = fixed_point(lat, sc->coefficients, FixedPointOptions{});
  const DRBSDESolution ref = solve_frozen(lat, sc->coefficients, mf.flow);
  // A sample equal to a full row of the reference has distance zero to the
  // slice built from that row.
  const MeasureSlice full = MeasureSlice::from_samples(ref.Y[1]);
  CHECK(wasserstein_p_pow(full, MeasureSlice::from_samples(ref.Y[1]), 2.0) == 0.0);
}

TEST_CASE("gap experiment on a mean-coupled scenario") {
  const Scenario* sc = find_scenario("chaos_meanfield");
  REQUIRE(sc != nullptr);
  ChaosConfig cfg;
  cfg.grid = sc->grid;
  cfg.jumps = sc->jumps;
  cfg.n_paths = 96;
  cfg.n_ref = 512;
  cfg.ref_seed = substream_seed(sc->seed, 0xCAULL);
  cfg.particle.n_paths = 96;
  cfg.particle.tol = 1e-9;

  const std::vector<int> grid{2, 8, 32};
  const std::vector<std::uint64_t> seeds{1, 2};
  const ChaosReport rep = chaos_gap_experiment(grid, sc->coefficients,
                                               terminal_from_coefficients(sc->coefficients),
                                               cfg, seeds);
  CHECK(rep.chaos_condition.holds);
  CHECK_FALSE(rep.exploratory);
  REQUIRE(rep.agg.size() == grid.size());
  for (std::size_t i = 0; i < rep.agg.size(); ++i) {
    CHECK(rep.agg[i].n == grid[i]);
    CHECK(rep.agg[i].g_mean >= 0.0);
    CHECK(rep.agg[i].what_mean >= 0.0);
    CHECK(rep.agg[i].wcomp_mean >= 0.0);
    CHECK(rep.agg[i].marg2_mean >= 0.0);
  }
  // Raw rows cover every (n, seed) pair with per-step detail plus aggregates.
  int aggregates = 0;
  for (const auto& r : rep.rows) {
    CHECK(r.value >= 0.0);
    if (r.step == -1) ++aggregates;
  }
  CHECK(aggregates >= static_cast<int>(grid.size() * seeds.size()));
  // This scenario satisfies the smallness condition, so the headline gaps
  // should already decay on a short grid.
  CHECK(rep.g_monotone);
  CHECK(rep.what_monotone);
}

TEST_CASE("gap experiment flags the regime, not just the numbers") {
  // Strong coupling on purpose: the smallness condition fails, the report
  // marks the run exploratory, and the numbers are still produced.
  InlineCoefficients ic;
  ic.b0 = -30.0;
  ic.c0 = 30.0;
  ic.floor_s = -40.0;
  ic.cap_s = 40.0;
  ic.x0 = 0.0;
  ic.xb = 0.4;
  ic.xlo = -5.0;
  ic.xhi = 5.0;
  ic.am = 0.5;
  ic.bm = 0.8;  // obstacle couplings drive the smallness condition
  ic.cm = 0.8;
  const CoefficientSet c = ic.build();
  ChaosConfig cfg;
  cfg.grid = TimeGrid{0.5, 2};
  cfg.n_paths = 32;
  cfg.n_ref = 64;
  cfg.particle.n_paths = 32;
  const ChaosReport rep =
      chaos_gap_experiment({2, 4}, c, terminal_from_coefficients(c), cfg, {1});
  CHECK_FALSE(rep.chaos_condition.holds);
  CHECK(rep.exploratory);
  CHECK(rep.agg.size() == 2);
}

TEST_CASE("gap experiment is deterministic in its inputs") {
  const Scenario* sc = find_scenario("chaos_meanfield");
  ChaosConfig cfg;
  cfg.grid = sc->grid;
  cfg.jumps = sc->jumps;
  cfg.n_paths = 48;
  cfg.n_ref = 128;
  cfg.ref_seed = 77;
  cfg.particle.n_paths = 48;
  const auto run = [&] {
    return chaos_gap_experiment({2, 4}, sc->coefficients,
                                terminal_from_coefficients(sc->coefficients), cfg, {9, 10});
  };
  const ChaosReport a = run();
  const ChaosReport b = run();
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].metric == b.rows[i].metric);
    CHECK(a.rows[i].value == b.rows[i].value);
  }
}
