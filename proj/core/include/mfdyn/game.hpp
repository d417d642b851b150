#pragma once

#include <cstdint>
#include <vector>

#include "mfdyn/drbsde.hpp"
#include "mfdyn/lattice.hpp"

namespace mfdyn {

// State-feedback stopping rule on the tree: stop[m][i] = 1 means "stop at
// node (m, i)". Rows cover steps 0..M-1; reaching the horizon without a
// stop pays the terminal value.
struct StoppingRule {
  std::vector<std::vector<std::uint8_t>> stop;
  static StoppingRule never(const Tree& tree);
  static StoppingRule always(const Tree& tree);
};

// Frozen two-player stopping game: fixed stop-payoff tables per node (low
// payoff for the early stopper, high payoff for the late one, terminal at
// the horizon) under the nonlinear expectation induced by the driver.
struct GameInstance {
  const NoiseLattice* lattice = nullptr;
  const CoefficientSet* coeffs = nullptr;
  const MeasureFlow* flow = nullptr;
  // Optional node-resolved law, one slice per (step, node). Takes precedence
  // over `flow`; used for games on joint trees where the empirical law
  // differs across nodes of the same level.
  const std::vector<std::vector<MeasureSlice>>* node_flow = nullptr;
  std::vector<std::vector<double>> H1, H2;  // rows 0..M-1
  std::vector<double> Xi;                   // horizon payoffs
  SolverOptions opts;

  const MeasureSlice& law_at(int m, std::size_t i) const {
    return node_flow ? (*node_flow)[m][i] : flow->at(m);
  }
};

// Payoff tables evaluated along a solved value process: H1/H2 at the
// solution values and frozen law, horizon payoffs from the terminal row.
GameInstance make_game_instance(const NoiseLattice& lattice, const CoefficientSet& c,
                                const MeasureFlow& flow, const DRBSDESolution& sol,
                                const SolverOptions& opts = {});

// Value of the stopped pair (first stop wins; a tie pays the low table) at
// the root, under the driver's nonlinear expectation.
double game_payoff(const GameInstance& g, const StoppingRule& tau, const StoppingRule& sigma);

struct GameValues {
  double upper = 0.0;              // min over late rules of max over early rules
  double lower = 0.0;              // max over early rules of min over late rules
  double backward_induction = 0.0;  // clamped recursion on the payoff tables
  int n_nonterminal = 0;
  std::uint64_t n_label_maps = 0;
};

// Exhaustive minimax over all state-feedback rule pairs via label-map
// memoization: one backward pass per {continue, stop-low, stop-high}
// labeling (3^nodes), then an O(1)-per-pair scan of all 4^nodes pairs.
GameValues brute_force_values(const GameInstance& g,
                              std::uint64_t max_label_maps = (1ULL << 22),
                              std::uint64_t max_pairs = (1ULL << 28));

// First-hitting rules of the payoff bands around a solved value process.
struct SaddlePair {
  StoppingRule tau;    // stop where Y touches the low payoff
  StoppingRule sigma;  // stop where Y touches the high payoff
};
SaddlePair extract_saddle(const GameInstance& g, const DRBSDESolution& sol, double tol = 1e-9);

struct SaddleCheckOptions {
  double tol = 1e-9;
  std::uint64_t max_exhaustive = (1ULL << 12);  // rule count per side for full scan
  int n_samples = 256;                          // sampled deviations otherwise
  std::uint64_t seed = 1234;
};

struct SaddleReport {
  double value = 0.0;
  double worst_up = 0.0;    // max payoff gain from deviating the early stopper
  double worst_down = 0.0;  // min payoff change from deviating the late stopper
  bool holds = false;
  bool exhaustive = false;
  std::uint64_t n_checked = 0;
};

// Unilateral-deviation check of a rule pair: no early-stopper deviation
// gains more than tol, no late-stopper deviation saves more than tol.
SaddleReport verify_saddle(const GameInstance& g, const StoppingRule& tau,
                           const StoppingRule& sigma, const SaddleCheckOptions& opts = {});

}  // namespace mfdyn
