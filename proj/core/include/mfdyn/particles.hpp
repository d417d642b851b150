#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mfdyn/drbsde.hpp"
#include "mfdyn/game.hpp"
#include "mfdyn/lattice.hpp"
#include "mfdyn/measure.hpp"
#include "mfdyn/rng.hpp"

namespace mfdyn {

// Terminal draw for one particle given its horizon state. The generator is
// private to the particle's stream and advances once per scenario, so draws
// follow the particle label, not the loop order.
using TerminalSampler = std::function<double(const LatticeState& st, Rng& rng)>;

// Deterministic sampler reading the terminal map off the state.
TerminalSampler terminal_from_coefficients(const CoefficientSet& c);

struct ParticleOptions {
  int n_paths = 512;   // scenarios per particle (shared scenario indexing)
  int max_outer = 60;  // sweeps of the system-level fixed point
  double tol = 1e-9;   // sup-norm change of the value tables between sweeps
  // Under-relaxation of the law update: the flow is rebuilt from a running
  // blend (1-damping)*old + damping*fresh of the value tables. 1 keeps the
  // plain sweep; < 1 breaks the oscillation the plain sweep can fall into
  // when the coupling is strong relative to the sample size.
  double damping = 1.0;
  SolverOptions solver;
  // Stream relabeling: particle i draws its noise and terminal substreams
  // from label relabel[i] (identity when empty). Solving a relabeled system
  // must reproduce the relabeled solution bit-for-bit.
  std::vector<int> stream_relabel;
  bool check_terminal_sandwich = true;
};

// Interacting system state: one independent noise copy per particle,
// scenario-indexed jointly so the cross-sectional empirical law is defined
// per (step, scenario).
struct ParticleSystemSolution {
  int n = 0;
  std::vector<NoiseLattice> lattices;         // per particle
  std::vector<std::vector<double>> terminal;  // [particle][scenario]
  std::vector<DRBSDESolution> particles;      // solved against `law`
  std::vector<std::vector<MeasureSlice>> law; // [step 0..M][scenario]
  int iterations = 0;   // outer sweeps performed
  double residual = 0.0;
  bool converged = false;
};

// Outer fixed point over the empirical flow: freeze the scenario-wise law,
// solve every particle on its own noise by regression backward induction,
// refresh the law, repeat until the value tables stop moving. Deterministic
// in (seed, options), independent of particle storage order.
ParticleSystemSolution solve_particle_system(int n, const TimeGrid& grid, const JumpSpec& jumps,
                                             const CoefficientSet& c,
                                             const TerminalSampler& sampler, std::uint64_t seed,
                                             const ParticleOptions& opts = {});

struct ExchangeabilityReport {
  bool identical = false;      // relabeled run == relabeled solution, bitwise
  bool law_identical = false;  // empirical flow slices match bitwise
  double max_abs_diff = 0.0;   // worst value-table gap (0 when identical)
};

// Solves the system twice, once with identity streams and once with
// relabeled streams, and compares particle i of the relabeled run against
// particle perm[i] of the base run.
ExchangeabilityReport exchangeability_check(int n, const TimeGrid& grid, const JumpSpec& jumps,
                                            const CoefficientSet& c,
                                            const TerminalSampler& sampler, std::uint64_t seed,
                                            const std::vector<int>& perm,
                                            const ParticleOptions& opts = {});

// Terminal values for the exact coupled solve: particle's payoff may read
// every particle's horizon state.
using JointTerminalMap =
    std::function<double(int particle, const std::vector<LatticeState>& states)>;

struct JointOracleOptions {
  SolverOptions solver;
  bool run_games = true;  // exhaustive per-particle stopping games
  std::uint64_t max_label_maps = (1ULL << 24);
  std::uint64_t max_pairs = (1ULL << 29);
  SaddleCheckOptions saddle{1e-9, (1ULL << 14), 256, 1234};
  std::uint64_t max_joint_nodes = 200000;
};

// Exact reference for small systems: the particles are solved together on
// the product tree, with the per-node empirical law resolved inside the
// implicit clamps, so there is no regression or outer-loop error.
struct JointOracle {
  int n = 0;
  std::vector<double> roots;                        // value per particle
  std::vector<std::vector<std::vector<double>>> Y;  // [particle][step][joint node]
  std::vector<std::vector<std::vector<double>>> dK1, dK2;
  std::vector<std::vector<MeasureSlice>> law;       // [step][joint node]
  std::vector<NoiseLattice> views;  // joint topology, per-particle noise labels
  std::vector<GameValues> games;    // per particle, when run_games
  std::vector<SaddlePair> saddles;
  std::vector<SaddleReport> saddle_reports;
};

JointOracle joint_tree_oracle(int n, const TimeGrid& grid, const JumpSpec& jumps,
                              const CoefficientSet& c, const JointTerminalMap& terminal,
                              const JointOracleOptions& opts = {});

// First-hitting stop tables of one particle's payoff bands on its ensemble.
struct ParticleStopRules {
  std::vector<std::vector<std::uint8_t>> tau, sigma;  // [step 0..M-1][scenario]
};

struct ParticleSaddleOptions {
  double eq_tol = 1e-9;  // band-hit detection
  double tol = 1e-9;     // slack added on top of the Monte Carlo allowance
};

struct ParticleSaddleReport {
  std::vector<ParticleStopRules> rules;
  std::vector<double> values;  // candidate-pair payoff per particle
  // Worst unilateral deviation outcomes, already net of the 2-standard-error
  // Monte Carlo allowance per probe: up = best gain a deviating early
  // stopper found, down = best saving a deviating late stopper found.
  std::vector<double> up_excess, down_excess;
  double worst_up_excess = 0.0;
  double worst_down_excess = 0.0;
  int n_deviations = 0;  // probes per side per particle
  bool holds = false;
};

// Candidate equilibrium rules from band hitting plus a sampled-deviation
// audit: each probe rule is a function of the particle's own running state
// or value band (so it is realizable). Payoffs are forward policy
// evaluations on the shared ensemble: each scenario pays the obstacle at
// the stop (terminal cash at the horizon) plus the running driver with the
// system's value and slope tables plugged in, so the per-scenario draws
// carry the whole estimator and the paired standard error is honest. The
// margin is compared against twice that paired standard error.
ParticleSaddleReport particle_saddles(const ParticleSystemSolution& sol,
                                      const CoefficientSet& c,
                                      const ParticleSaddleOptions& opts = {});

}  // namespace mfdyn
