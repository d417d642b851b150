#include <benchmark/benchmark.h>

#include <mfdyn/chaos.hpp>
#include <mfdyn/drbsde.hpp>
#include <mfdyn/game.hpp>
#include <mfdyn/meanfield.hpp>
#include <mfdyn/measure.hpp>
#include <mfdyn/particles.hpp>
#include <mfdyn/rng.hpp>
#include <mfdyn/scenarios.hpp>

#include <vector>

namespace {

using namespace mfdyn;

// One backward pass over the scenario tree with the law frozen at a point mass.
void tree_backward_solve(benchmark::State& state) {
  const Scenario& sc = *find_scenario("binding_lower");
  const NoiseLattice lat = sc.make_lattice();
  const MeasureFlow flow = MeasureFlow::dirac(0.0, sc.grid.steps);
  for (auto _ : state) {
    DRBSDESolution sol = solve_frozen(lat, sc.coefficients, flow);
    benchmark::DoNotOptimize(sol.root_value());
  }
}
BENCHMARK(tree_backward_solve);

// Regression backward induction on a sampled ensemble; arg = scenario count.
void path_backward_solve(benchmark::State& state) {
  const int n_paths = static_cast<int>(state.range(0));
  const Scenario sc =
      find_scenario("insurance")->with_backend(Backend::Paths, n_paths, 0x5eedULL);
  const NoiseLattice lat = sc.make_lattice();
  const MeasureFlow flow = MeasureFlow::dirac(1.0, sc.grid.steps);
  for (auto _ : state) {
    DRBSDESolution sol = solve_frozen(lat, sc.coefficients, flow);
    benchmark::DoNotOptimize(sol.root_value());
  }
}
BENCHMARK(path_backward_solve)->Arg(256)->Arg(1024);

// Full law iteration from a point-mass start on the tree backend.
void mean_field_fixed_point(benchmark::State& state) {
  const Scenario& sc = *find_scenario("binding_lower");
  const NoiseLattice lat = sc.make_lattice();
  for (auto _ : state) {
    FixedPointResult fp = fixed_point(lat, sc.coefficients);
    benchmark::DoNotOptimize(fp.value);
  }
}
BENCHMARK(mean_field_fixed_point);

// Quantile-coupling distance between two sampled laws; arg = sample size.
void wasserstein_quantile(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(0xbe11ULL);
  std::vector<double> xs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = rng.gaussian();
    ys[i] = 0.5 * rng.gaussian() + 0.3;
  }
  const MeasureSlice a = MeasureSlice::from_samples(xs);
  const MeasureSlice b = MeasureSlice::from_samples(ys);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein_p(a, b, 2.0));
}
BENCHMARK(wasserstein_quantile)->Arg(64)->Arg(512)->Arg(4096);

// Exhaustive minimax over stopping-rule pairs on a plain binary tree.
void tree_game_brute_force(benchmark::State& state) {
  const int steps = static_cast<int>(state.range(0));
  const Scenario& sc = *find_scenario("binding_lower");
  const TimeGrid grid{1.0, steps};
  const NoiseLattice lat = build_tree(grid, JumpSpec{});
  const MeasureFlow flow = MeasureFlow::dirac(0.0, steps);
  const DRBSDESolution sol = solve_frozen(lat, sc.coefficients, flow);
  const GameInstance g = make_game_instance(lat, sc.coefficients, flow, sol);
  for (auto _ : state) {
    GameValues v = brute_force_values(g);
    benchmark::DoNotOptimize(v.lower);
  }
}
BENCHMARK(tree_game_brute_force)->Arg(2)->Arg(3)->Arg(4);

// Interacting-system sweep to the empirical fixed point; arg = particles.
void particle_system_sweep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Scenario& sc = *find_scenario("chaos_meanfield");
  ParticleOptions opts;
  opts.n_paths = 128;
  for (auto _ : state) {
    ParticleSystemSolution sys =
        solve_particle_system(n, sc.grid, sc.jumps, sc.coefficients,
                              terminal_from_coefficients(sc.coefficients),
                              substream_seed(sc.seed, 0x70ULL), opts);
    benchmark::DoNotOptimize(sys.particles[0].root_value());
  }
}
BENCHMARK(particle_system_sweep)->Arg(2)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
