#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfdyn/meanfield.hpp"
#include "mfdyn/particles.hpp"

namespace mfdyn {

// Frozen-law solves on the interacting run's own noise: copy i reuses
// particle i's ensemble and terminal draws, with the law pinned to the
// converged mean-field flow instead of the cross-particle empirical one.
std::vector<DRBSDESolution> iid_copies(const MeasureFlow& reference,
                                       const ParticleSystemSolution& sys,
                                       const CoefficientSet& c, const SolverOptions& opts = {});

struct LlnRow {
  int n = 0;
  double estimate = 0.0;  // seed-mean of the worst step-wise p-distance
  double se = 0.0;
};

// Empirical-law convergence over independent draws: per seed, n trajectories
// are resampled (with replacement) from the reference solution's ensemble,
// and the worst step-wise W_p^p between their empirical slice and the
// reference slice is recorded; seeds are then averaged per n.
std::vector<LlnRow> lln_experiment(const NoiseLattice& ref_lattice, const DRBSDESolution& ref_sol,
                                   double p, const std::vector<int>& n_grid,
                                   const std::vector<std::uint64_t>& seeds);

struct ChaosConfig {
  TimeGrid grid;
  JumpSpec jumps;
  int n_paths = 256;  // scenarios per particle in each interacting run
  int n_ref = 2048;   // reference ensemble size, kept well above the largest n
  std::uint64_t ref_seed = 0xA11CEULL;
  ParticleOptions particle;       // per-run solver and tolerance settings
  FixedPointOptions fixed_point;  // reference-flow iteration
};

struct ChaosRow {
  int n = 0;
  std::uint64_t seed = 0;
  int step = -1;  // -1 marks per-run aggregates
  std::string metric;
  double value = 0.0;
};

struct ChaosAggregate {
  int n = 0;
  double g_mean = 0.0, g_se = 0.0;          // value gap, sup over steps
  double what_mean = 0.0, what_se = 0.0;    // empirical-law distance estimate
  double wcomp_mean = 0.0, wcomp_se = 0.0;  // push-difference gap
  double marg2_mean = 0.0, marg2_se = 0.0;  // two-particle joint-law distance
};

struct ChaosReport {
  std::vector<int> n_grid;
  std::vector<std::uint64_t> seeds;
  int n_ref = 0, n_paths = 0;
  double p = 2.0;
  ConditionCheck chaos_condition;  // failing marks the runs exploratory
  bool exploratory = false;
  std::vector<ChaosRow> rows;       // long format, deterministic order
  std::vector<ChaosAggregate> agg;  // one per n, seed-aggregated
  bool g_monotone = false, g_halved = false;
  bool what_monotone = false, what_halved = false;
  bool marg2_decreasing = false;

  bool trend_ok() const {
    return g_monotone && g_halved && what_monotone && what_halved && marg2_decreasing;
  }
};

// Couples each interacting run to frozen-law re-solves on the same noise
// across the n-grid, and measures how the gaps shrink with n: per-value
// distance, empirical-law distance to the reference flow, push-difference
// distance, and the joint law of the first two particles at the start
// against the corresponding product sample.
ChaosReport chaos_gap_experiment(const std::vector<int>& n_grid, const CoefficientSet& c,
                                 const TerminalSampler& sampler, const ChaosConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds);

}  // namespace mfdyn
