#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mfdyn/errors.hpp"

namespace mfdyn {

// Uniform time grid over [0, T] with M steps.
struct TimeGrid {
  double horizon = 1.0;  // T
  int steps = 1;         // M

  double dt() const { return horizon / steps; }
  double time(int m) const {
    return m >= steps ? horizon : horizon * static_cast<double>(m) / steps;
  }
  void validate() const;
};

// Finite jump-mark set with per-mark intensities.
struct JumpSpec {
  std::vector<double> marks;        // e_k
  std::vector<double> intensities;  // lambda_k >= 0

  int n_marks() const { return static_cast<int>(marks.size()); }
  double total_intensity() const;
  void validate(const TimeGrid& grid) const;
};

// Driver state visible to coefficients: Brownian level plus cumulative jump
// counts per mark.
struct LatticeState {
  double b = 0.0;
  std::vector<int> jump_counts;
};

struct NodeRef {
  int step = 0;
  int index = 0;
};

struct PathStep {
  int step = 0;
  int path = 0;
};

struct Branch {
  int child = 0;     // node index at the next level
  double prob = 0.0;
  double db = 0.0;   // Brownian increment +-sqrt(dt)
  int mark = -1;     // jump mark index fired on this branch, -1 = none
};

struct TreeNode {
  LatticeState state;
  double prob = 0.0;  // unconditional probability of reaching the node
  std::vector<Branch> branches;  // empty at terminal level
};

// Recombining lattice: nodes at level m are distinct (Brownian level, jump
// count) states; all coefficient inputs are state functions, so recombining
// loses nothing and keeps node counts small enough for exhaustive games.
struct Tree {
  std::vector<std::vector<TreeNode>> levels;  // levels[m], m = 0..M

  int n_levels() const { return static_cast<int>(levels.size()); }
  int n_nodes(int m) const { return static_cast<int>(levels[m].size()); }
  int n_nonterminal_nodes() const;
  const TreeNode& node(NodeRef r) const { return levels[r.step][r.index]; }
};

// Seeded i.i.d. path ensemble: per path and step a Brownian sign and one
// Bernoulli(lambda_k dt) indicator per mark. Each path derives its own
// substream from (seed, path index), so results do not depend on how
// generation is chunked.
struct PathEnsemble {
  int n_paths = 0;
  std::uint64_t seed = 0;
  int n_marks = 0;
  std::vector<std::int8_t> signs;   // [path * M + m] in {+1, -1}
  std::vector<std::uint8_t> jumps;  // [(path * M + m) * n_marks + k] in {0, 1}

  int sign(int path, int m, int M) const { return signs[static_cast<std::size_t>(path) * M + m]; }
  int jump(int path, int m, int k, int M) const {
    return jumps[(static_cast<std::size_t>(path) * M + m) * n_marks + k];
  }
};

enum class Backend { Tree, Paths };

struct NoiseLattice {
  TimeGrid grid;
  JumpSpec jumps;
  Backend backend = Backend::Tree;
  Tree tree;
  PathEnsemble paths;

  int n_marks() const { return jumps.n_marks(); }
  int n_steps() const { return grid.steps; }
  // State of a path at a step (Brownian level, cumulative jump counts).
  LatticeState path_state(int path, int m) const;
};

// Exact lattice with 2*(1+K)-ary branching per node: Brownian sign crossed
// with {no jump, jump mark k}, probabilities {(1 - sum lambda dt)/2,
// lambda_k dt / 2}.
NoiseLattice build_tree(const TimeGrid& grid, const JumpSpec& jumps);

NoiseLattice sample_paths(const TimeGrid& grid, const JumpSpec& jumps,
                          int n_paths, std::uint64_t seed);

// One-step conditional expectation of next-level values. Exact weighted
// branch average on trees; polynomial least-squares regression on path
// ensembles (total degree <= basis_degree in Brownian level and jump counts).
// Rank-deficient designs are solved by rank-revealing projection, which keeps
// fitted values unique; SingularRegression signals an empty or all-zero
// design.
std::vector<double> conditional_expectation(const NoiseLattice& lattice,
                                            const std::vector<double>& values_next,
                                            int m, int basis_degree = 2);

// Least-squares fit of target on polynomial features of per-path states at
// step m; returns fitted values per path. Shared by the solver's Z/U
// regressions. A fit_mask restricts the rows entering the fit (nonzero =
// keep) while predictions still cover every path; stopped-payoff evaluation
// needs this so absorbed paths with stale cash do not pollute the sample.
std::vector<double> regress_on_state(const NoiseLattice& lattice,
                                     const std::vector<double>& target, int m,
                                     int basis_degree,
                                     const std::vector<unsigned char>* fit_mask = nullptr,
                                     int count_degree = -1);

// Same fit with caller-supplied feature columns appended to the polynomial
// basis (one row per path). Used by interacting-system solves to condition
// on cross-sectional statistics.
std::vector<double> regress_on_features(const std::vector<std::vector<double>>& extra,
                                        const NoiseLattice& lattice,
                                        const std::vector<double>& target, int m,
                                        int basis_degree,
                                        const std::vector<unsigned char>* fit_mask = nullptr,
                                        int count_degree = -1);

// Depth-first enumeration of all root-to-leaf paths of a tree; fn receives
// the node index per level and the path probability. Guarded by a cap on the
// number of paths.
void enumerate_tree_paths(const Tree& tree,
                          const std::function<void(const std::vector<int>&, double)>& fn,
                          std::uint64_t max_paths = (1ULL << 22));

}  // namespace mfdyn
