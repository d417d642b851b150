#pragma once

#include <vector>

#include "mfdyn/coefficients.hpp"
#include "mfdyn/lattice.hpp"
#include "mfdyn/measure.hpp"

namespace mfdyn {

struct SolverOptions {
  int basis_degree = 2;
  // Cap on the jump-count part of the basis degree (-1 = follow
  // basis_degree). Rare high counts give quadratic count features enormous
  // leverage on sampled ensembles; capping at 1 keeps the fit stable there
  // without touching the diffusion part.
  int count_degree = -1;
  double implicit_tol = 1e-12;
  int implicit_max_iter = 200;
  double implicit_damping = 1.0;  // 1 = undamped fixed point
  bool reflected = true;          // false: skip both obstacles (plain equation)
  // Optional extra regression columns per (step, path), appended to the
  // polynomial state basis. Only read by the path backend.
  const std::vector<std::vector<std::vector<double>>>* extra_features = nullptr;
};

// Law input per (step, path). Tree solves see one slice per step; path
// solves for interacting systems feed scenario-wise empirical slices.
class FlowView {
 public:
  virtual ~FlowView() = default;
  virtual const MeasureSlice& slice(int m, int col) const = 0;
};

class BroadcastFlow final : public FlowView {
 public:
  explicit BroadcastFlow(const MeasureFlow& flow) : flow_(&flow) {}
  const MeasureSlice& slice(int m, int) const override { return flow_->at(m); }

 private:
  const MeasureFlow* flow_;
};

// References caller-owned storage, one slice per (step, path).
class GridFlow final : public FlowView {
 public:
  explicit GridFlow(const std::vector<std::vector<MeasureSlice>>* grid) : grid_(grid) {}
  const MeasureSlice& slice(int m, int col) const override { return (*grid_)[m][col]; }

 private:
  const std::vector<std::vector<MeasureSlice>>* grid_;
};

// Backward solution on a window of steps [first_step, last_step]. Row r
// holds absolute step first_step + r; columns are tree nodes or paths.
// Y has one row per step in the window; Z, U, u_agg, dK1, dK2 stop one
// row earlier (no increments at the terminal step).
struct DRBSDESolution {
  Backend backend = Backend::Tree;
  int first_step = 0;
  std::vector<std::vector<double>> Y, Z, dK1, dK2;
  std::vector<std::vector<std::vector<double>>> U;  // [row][col][mark]
  std::vector<std::vector<double>> u_agg;           // sum_k lambda_k U_k

  int n_rows() const { return static_cast<int>(Y.size()); }
  int last_step() const { return first_step + n_rows() - 1; }
  const std::vector<double>& values_at(int m) const { return Y[m - first_step]; }
  // Scalar value at the first stored step: node 0 on trees (the root for
  // full solves), ensemble average on paths.
  double root_value() const;
};

// Full-horizon solve with the law frozen to `flow` and terminal c.xi.
DRBSDESolution solve_frozen(const NoiseLattice& lattice, const CoefficientSet& c,
                            const MeasureFlow& flow, const SolverOptions& opts = {});

// Window solve on steps [first, last] with given terminal values at `last`
// (one per node/path at that step).
DRBSDESolution solve_frozen_window(const NoiseLattice& lattice, const CoefficientSet& c,
                                   const MeasureFlow& flow, int first, int last,
                                   const std::vector<double>& terminal,
                                   const SolverOptions& opts = {});

// General form: scenario-wise law and optional terminal override
// (nullptr: use c.xi, only allowed when last == grid.steps).
DRBSDESolution solve_frozen_view(const NoiseLattice& lattice, const CoefficientSet& c,
                                 const FlowView& view, int first, int last,
                                 const std::vector<double>* terminal,
                                 const SolverOptions& opts = {});

struct ClampResult {
  double y = 0.0;
  double dk1 = 0.0, dk2 = 0.0;
  int iterations = 0;
};

// One implicit node update: solves y = med(h1(y), cont + dt f(t,y,z,u,mu),
// h2(y)) by damped fixed point and reports the push increments.
ClampResult clamp_implicit(double cont, double z, double u_agg, double t, double dt,
                           const MeasureSlice& mu, const LatticeState& st,
                           const CoefficientSet& c, const SolverOptions& opts = {});

// Nonlinear expectation of a stopped payoff. stop_payoff has rows for
// absolute steps 0..M; NaN marks "not stopped here"; the last row must be
// fully set. Returns the value table of the same shape (entry [m][i] is
// the value at step m given no stop before m).
std::vector<std::vector<double>> f_expectation(
    const NoiseLattice& lattice, const CoefficientSet& c, const FlowView& view,
    const std::vector<std::vector<double>>& stop_payoff, const SolverOptions& opts = {});

// Weights for the stability estimate: requires eta <= 1/lip^2 and
// beta >= 2 lip + 3/eta for the Lipschitz bound `lip` of the first driver.
struct EstimateParams {
  double beta = 0.0;
  double eta = 0.0;
  double p = 2.0;
  void validate(double lip) const;
};

struct AprioriReport {
  double worst_gap = 0.0;  // max over (step, node) of lhs - rhs
  double slack = 0.0;
  bool holds = false;
  double worst_lhs = 0.0, worst_rhs = 0.0;
  int worst_step = -1, worst_node = -1;
};

// Node-wise stability bound for two plain (unreflected) solutions driven by
// the same noise: |e^{bt} dY|^p <= 2^{p/2-1} (E[|e^{bT} dxi|^p | node] +
// eta^p E[(sum_s |e^{bs} df_s|^2 dt)^{p/2} | node]) + slack, with df the
// driver difference along the second solution. Tree backend only.
AprioriReport check_apriori_estimate(const NoiseLattice& lattice, const CoefficientSet& c1,
                                     const CoefficientSet& c2, const MeasureFlow& flow,
                                     const EstimateParams& ep, double slack,
                                     const SolverOptions& opts = {});

struct KBoundReport {
  double k1_moment = 0.0, k2_moment = 0.0;  // E[(K_T)^p]
  double theta1_norm_pow = 0.0, theta2_norm_pow = 0.0;  // E[sup_t Theta^p]
  double bound1 = 0.0, bound2 = 0.0;        // p^p * norm_pow
  bool holds1 = false, holds2 = false, holds = false;
  double mokobodzki_gap = 0.0;  // max violation of h1 <= th1 - th2 <= h2
  bool mokobodzki_ok = false;
};

// Bounds the push moments by p^p E[sup Theta_i^p] where Theta_1 stacks the
// floor-side supermartingale, E[xi^- | .] and the negative driver part along
// the solution (Theta_2 the mirror). The supermartingales are the optimal
// stopping envelopes of the cap process split into parts. Tree backend only.
KBoundReport check_k_bound(const NoiseLattice& lattice, const CoefficientSet& c,
                           const MeasureFlow& flow, const DRBSDESolution& sol,
                           const SolverOptions& opts = {});

// Optimal stopping envelope of a state-process table X[m][node] on the tree.
std::vector<std::vector<double>> snell_envelope(const Tree& tree,
                                                const std::vector<std::vector<double>>& x);

}  // namespace mfdyn
