#pragma once

#include <vector>

#include "mfdyn/drbsde.hpp"
#include "mfdyn/game.hpp"
#include "mfdyn/measure.hpp"

namespace mfdyn {

struct ConditionCheck {
  double lhs = 0.0;
  double threshold = 0.0;
  bool holds = false;  // strict inequality
};

// Smallness of the stop-payoff couplings that makes the value operator a
// contraction: sum of p-th powers of the four Lipschitz constants against
// 2^(3 - 5p/2).
ConditionCheck check_contraction_condition(const CoefficientSet& c);

// Stronger smallness used for the interacting-system convergence rate:
// 2^(p/2-1) 7^(p-1) times the same sum against 1.
ConditionCheck check_chaos_condition(const CoefficientSet& c);

struct PsiResult {
  MeasureFlow flow;        // marginal laws of the solved value process
  DRBSDESolution solution;
};

// One application of the value operator: solve with the law frozen to
// `flow`, return the solution and its marginal flow.
PsiResult apply_psi(const NoiseLattice& lattice, const CoefficientSet& c,
                    const MeasureFlow& flow, const SolverOptions& opts = {});

// Empirical law of a solution row (node-probability weighted on trees,
// uniform over paths otherwise).
MeasureSlice law_from_solution(const NoiseLattice& lattice, const DRBSDESolution& sol, int m);

enum class FixedPointMode { Global, WindowedPasting };

struct FixedPointOptions {
  FixedPointMode mode = FixedPointMode::Global;
  int max_iter = 100;
  double tol = 1e-10;
  double damping = 1.0;  // weight on the fresh flow when mixing iterates
  int window_steps = 0;  // WindowedPasting: steps per window (0: max_iter-independent default M)
  double init_value = 0.0;  // starting flow is the point mass here
  SolverOptions solver;
};

struct FixedPointResult {
  MeasureFlow flow;
  DRBSDESolution solution;  // solved against the returned flow
  int iterations = 0;
  double residual = 0.0;  // sup over steps of the p-distance between iterates
  bool converged = false;
  std::vector<double> history;  // residual per outer iteration
};

// Iterates the value operator from a point-mass starting flow until the
// flow distance drops below tol; throws NoConvergence past max_iter.
// WindowedPasting runs the same iteration per time window from the horizon
// backwards, pasting terminal values, then measures the global residual.
FixedPointResult fixed_point(const NoiseLattice& lattice, const CoefficientSet& c,
                             const FixedPointOptions& opts = {});

struct MeanFieldValue {
  double value = 0.0;
  FixedPointResult fixed_point;
  SaddlePair saddle;
  SaddleReport report;
  bool verified = false;  // deviation margins were checked
};

// Fixed point plus first-hitting rules of the payoff bands and their
// unilateral-deviation margins. Tree backend only.
MeanFieldValue mean_field_value_and_saddle(const NoiseLattice& lattice, const CoefficientSet& c,
                                           const FixedPointOptions& fp_opts = {},
                                           const SaddleCheckOptions& saddle_opts = {});

}  // namespace mfdyn
