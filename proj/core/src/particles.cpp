#include "mfdyn/particles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace mfdyn {

namespace {

constexpr double kSandwichTol = 1e-9;

double med3(double lo, double x, double hi) { return std::min(std::max(x, lo), hi); }

int stream_label(const ParticleOptions& opts, int i) {
  return opts.stream_relabel.empty() ? i : opts.stream_relabel[i];
}

void check_relabel(const ParticleOptions& opts, int n) {
  if (opts.stream_relabel.empty()) return;
  if (static_cast<int>(opts.stream_relabel.size()) != n)
    throw InvalidParam("particles: stream_relabel size must equal n");
  std::vector<char> seen(n, 0);
  for (int lbl : opts.stream_relabel) {
    if (lbl < 0 || lbl >= n || seen[lbl])
      throw InvalidParam("particles: stream_relabel must be a permutation of 0..n-1");
    seen[lbl] = 1;
  }
}

double table_gap(const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b) {
  double gap = 0.0;
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].size() != b[r].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a[r].size(); ++j) gap = std::max(gap, std::abs(a[r][j] - b[r][j]));
  }
  return gap;
}

bool table_equal(const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t r = 0; r < a.size(); ++r)
    if (!std::equal(a[r].begin(), a[r].end(), b[r].begin(), b[r].end())) return false;
  return true;
}

}  // namespace

TerminalSampler terminal_from_coefficients(const CoefficientSet& c) {
  TerminalFn xi = c.xi;
  return [xi](const LatticeState& st, Rng&) { return xi(st); };
}

ParticleSystemSolution solve_particle_system(int n, const TimeGrid& grid, const JumpSpec& jumps,
                                             const CoefficientSet& c,
                                             const TerminalSampler& sampler, std::uint64_t seed,
                                             const ParticleOptions& opts) {
  if (n < 1) throw InvalidParam("solve_particle_system: n >= 1 required");
  if (opts.n_paths < 1) throw InvalidParam("solve_particle_system: n_paths >= 1 required");
  if (opts.max_outer < 2) throw InvalidParam("solve_particle_system: max_outer >= 2 required");
  if (!(opts.damping > 0.0) || opts.damping > 1.0)
    throw InvalidParam("solve_particle_system: damping must lie in (0, 1]");
  grid.validate();
  jumps.validate(grid);
  check_relabel(opts, n);

  const int M = grid.steps;
  const int S = opts.n_paths;

  ParticleSystemSolution out;
  out.n = n;
  out.lattices.reserve(n);
  out.terminal.assign(n, std::vector<double>(S));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t lbl = static_cast<std::uint64_t>(stream_label(opts, i));
    out.lattices.push_back(sample_paths(grid, jumps, S, substream_seed(seed, 2 * lbl)));
    Rng rng(substream_seed(seed, 2 * lbl + 1));
    for (int s = 0; s < S; ++s) out.terminal[i][s] = sampler(out.lattices[i].path_state(s, M), rng);
  }

  // Scenario-wise empirical flow; the horizon row is pinned by the terminals
  // and never moves.
  out.law.assign(M + 1, std::vector<MeasureSlice>(S));
  std::vector<double> column(n);
  for (int s = 0; s < S; ++s) {
    for (int i = 0; i < n; ++i) column[i] = out.terminal[i][s];
    out.law[M][s] = MeasureSlice::from_samples(column);
  }
  for (int m = 0; m < M; ++m)
    for (int s = 0; s < S; ++s) out.law[m][s] = MeasureSlice::dirac(0.0);

  if (opts.check_terminal_sandwich) {
    const double T = grid.horizon;
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < S; ++s) {
        const LatticeState st = out.lattices[i].path_state(s, M);
        const double xi = out.terminal[i][s];
        const MeasureSlice& mu = out.law[M][s];
        if (c.h1(T, xi, st, mu) > xi + kSandwichTol || xi > c.h2(T, xi, st, mu) + kSandwichTol)
          throw InvalidTerminal("solve_particle_system: terminal outside the payoff band");
      }
  }

  const GridFlow view(&out.law);
  out.particles.resize(n);
  // Law-building value state: equal to the last solve when damping == 1,
  // a running blend of past solves otherwise. The first sweep seeds it
  // directly so the arbitrary initial flow never enters the blend.
  std::vector<std::vector<std::vector<double>>> state(n);
  for (int sweep = 1; sweep <= opts.max_outer; ++sweep) {
    std::vector<DRBSDESolution> fresh(n);
    for (int i = 0; i < n; ++i)
      fresh[i] = solve_frozen_view(out.lattices[i], c, view, 0, M, &out.terminal[i], opts.solver);

    double residual = std::numeric_limits<double>::infinity();
    if (sweep > 1) {
      residual = 0.0;
      for (int i = 0; i < n; ++i) residual = std::max(residual, table_gap(fresh[i].Y, state[i]));
    }
    for (int i = 0; i < n; ++i) {
      if (sweep == 1 || opts.damping == 1.0) {
        state[i] = fresh[i].Y;
      } else {
        const double w = opts.damping;
        for (int m = 0; m < M; ++m)
          for (int s = 0; s < S; ++s) state[i][m][s] = (1.0 - w) * state[i][m][s] + w * fresh[i].Y[m][s];
        state[i][M] = fresh[i].Y[M];
      }
    }
    out.particles = std::move(fresh);
    const bool settled = sweep > 1 && residual <= opts.tol;
    for (int m = 0; m < M; ++m)
      for (int s = 0; s < S; ++s) {
        for (int i = 0; i < n; ++i) column[i] = settled ? out.particles[i].Y[m][s] : state[i][m][s];
        out.law[m][s] = MeasureSlice::from_samples(column);
      }
    out.iterations = sweep;
    if (sweep > 1) out.residual = residual;
    if (settled) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw NoConvergence(
        "solve_particle_system: flow iteration did not settle; try a smaller "
        "ensemble or basis degree 1 (rare jump counts make the quadratic fit "
        "extrapolate), or damping < 1 for mild oscillation");
  return out;
}

ExchangeabilityReport exchangeability_check(int n, const TimeGrid& grid, const JumpSpec& jumps,
                                            const CoefficientSet& c,
                                            const TerminalSampler& sampler, std::uint64_t seed,
                                            const std::vector<int>& perm,
                                            const ParticleOptions& opts) {
  if (static_cast<int>(perm.size()) != n)
    throw InvalidParam("exchangeability_check: perm size must equal n");

  ParticleOptions base_opts = opts;
  base_opts.stream_relabel.clear();
  ParticleOptions rel_opts = opts;
  rel_opts.stream_relabel = perm;
  check_relabel(rel_opts, n);

  const ParticleSystemSolution base = solve_particle_system(n, grid, jumps, c, sampler, seed, base_opts);
  const ParticleSystemSolution rel = solve_particle_system(n, grid, jumps, c, sampler, seed, rel_opts);

  ExchangeabilityReport rep;
  rep.identical = true;
  for (int i = 0; i < n; ++i) {
    const DRBSDESolution& a = rel.particles[i];
    const DRBSDESolution& b = base.particles[perm[i]];
    if (!table_equal(a.Y, b.Y) || !table_equal(a.Z, b.Z) || !table_equal(a.dK1, b.dK1) ||
        !table_equal(a.dK2, b.dK2))
      rep.identical = false;
    rep.max_abs_diff = std::max(rep.max_abs_diff, table_gap(a.Y, b.Y));
    if (!std::equal(rel.terminal[i].begin(), rel.terminal[i].end(), base.terminal[perm[i]].begin(),
                    base.terminal[perm[i]].end()))
      rep.identical = false;
  }

  rep.law_identical = true;
  for (std::size_t m = 0; m < base.law.size(); ++m)
    for (std::size_t s = 0; s < base.law[m].size(); ++s) {
      const MeasureSlice& a = rel.law[m][s];
      const MeasureSlice& b = base.law[m][s];
      if (a.size() != b.size() || !std::equal(a.atoms().begin(), a.atoms().end(), b.atoms().begin()))
        rep.law_identical = false;
    }
  return rep;
}

JointOracle joint_tree_oracle(int n, const TimeGrid& grid, const JumpSpec& jumps,
                              const CoefficientSet& c, const JointTerminalMap& terminal,
                              const JointOracleOptions& opts) {
  if (n < 1 || n > 2) throw InvalidParam("joint_tree_oracle: n must be 1 or 2");
  grid.validate();
  jumps.validate(grid);

  const NoiseLattice single = build_tree(grid, jumps);
  const Tree& tr = single.tree;
  const int M = grid.steps;
  const double dt = grid.dt();
  const int K = jumps.n_marks();

  std::vector<int> jn(M + 1);
  std::uint64_t total = 0;
  for (int m = 0; m <= M; ++m) {
    const std::uint64_t nm = static_cast<std::uint64_t>(tr.n_nodes(m));
    const std::uint64_t cnt = n == 1 ? nm : nm * nm;
    if (cnt > opts.max_joint_nodes) throw TooLarge("joint_tree_oracle: product level too large");
    jn[m] = static_cast<int>(cnt);
    total += cnt;
  }
  if (total > opts.max_joint_nodes) throw TooLarge("joint_tree_oracle: product tree too large");

  auto split = [&](int m, int j) {
    return n == 1 ? std::pair<int, int>(j, j) : std::pair<int, int>(j / tr.n_nodes(m), j % tr.n_nodes(m));
  };

  JointOracle out;
  out.n = n;
  out.views.assign(n, NoiseLattice{});
  for (int p = 0; p < n; ++p) {
    out.views[p].grid = grid;
    out.views[p].jumps = jumps;
    out.views[p].backend = Backend::Tree;
    out.views[p].tree.levels.assign(M + 1, {});
  }

  for (int m = 0; m <= M; ++m) {
    for (int p = 0; p < n; ++p) out.views[p].tree.levels[m].reserve(jn[m]);
    for (int j = 0; j < jn[m]; ++j) {
      const auto [i1, i2] = split(m, j);
      const TreeNode& a = tr.levels[m][i1];
      const TreeNode& b = tr.levels[m][i2];
      const double prob = n == 1 ? a.prob : a.prob * b.prob;
      for (int p = 0; p < n; ++p) {
        TreeNode node;
        node.state = p == 0 ? a.state : b.state;
        node.prob = prob;
        out.views[p].tree.levels[m].push_back(std::move(node));
      }
      if (m == M) continue;
      if (n == 1) {
        out.views[0].tree.levels[m][j].branches = a.branches;
      } else {
        auto& br0 = out.views[0].tree.levels[m][j].branches;
        auto& br1 = out.views[1].tree.levels[m][j].branches;
        br0.reserve(a.branches.size() * b.branches.size());
        br1.reserve(a.branches.size() * b.branches.size());
        for (const Branch& ba : a.branches)
          for (const Branch& bb : b.branches) {
            const int child = ba.child * tr.n_nodes(m + 1) + bb.child;
            const double pj = ba.prob * bb.prob;
            br0.push_back(Branch{child, pj, ba.db, ba.mark});
            br1.push_back(Branch{child, pj, bb.db, bb.mark});
          }
      }
    }
  }

  out.Y.assign(n, std::vector<std::vector<double>>(M + 1));
  out.dK1.assign(n, std::vector<std::vector<double>>(M));
  out.dK2.assign(n, std::vector<std::vector<double>>(M));
  out.law.assign(M + 1, {});
  for (int m = 0; m <= M; ++m) {
    for (int p = 0; p < n; ++p) out.Y[p][m].assign(jn[m], 0.0);
    out.law[m].resize(jn[m]);
    if (m < M)
      for (int p = 0; p < n; ++p) {
        out.dK1[p][m].assign(jn[m], 0.0);
        out.dK2[p][m].assign(jn[m], 0.0);
      }
  }

  std::vector<LatticeState> states(n);
  std::vector<double> yvec(n);
  for (int j = 0; j < jn[M]; ++j) {
    for (int p = 0; p < n; ++p) states[p] = out.views[p].tree.levels[M][j].state;
    for (int p = 0; p < n; ++p) {
      out.Y[p][M][j] = terminal(p, states);
      yvec[p] = out.Y[p][M][j];
    }
    out.law[M][j] = MeasureSlice::from_samples(yvec);
  }

  std::vector<double> cont(n), zval(n), ua(n), ynew(n), base(n);
  std::vector<std::vector<double>> jump_sum(n, std::vector<double>(std::max(K, 1), 0.0));
  for (int m = M - 1; m >= 0; --m) {
    const double t = grid.time(m);
    for (int j = 0; j < jn[m]; ++j) {
      for (int p = 0; p < n; ++p) {
        states[p] = out.views[p].tree.levels[m][j].state;
        cont[p] = zval[p] = 0.0;
        std::fill(jump_sum[p].begin(), jump_sum[p].end(), 0.0);
        for (const Branch& br : out.views[p].tree.levels[m][j].branches) {
          const double py = br.prob * out.Y[p][m + 1][br.child];
          cont[p] += py;
          zval[p] += py * br.db;
          if (br.mark >= 0) jump_sum[p][br.mark] += py;
        }
        zval[p] /= dt;
        ua[p] = 0.0;
        for (int k = 0; k < K; ++k) {
          const double lam = jumps.intensities[k];
          if (lam > 0.0) ua[p] += (jump_sum[p][k] - lam * dt * cont[p]) / dt;
        }
        yvec[p] = cont[p];
      }

      bool done = false;
      for (int it = 0; it < opts.solver.implicit_max_iter; ++it) {
        const MeasureSlice mu = MeasureSlice::from_samples(yvec);
        double worst = 0.0;
        for (int p = 0; p < n; ++p) {
          const double b = cont[p] + dt * c.f(t, yvec[p], zval[p], ua[p], mu);
          const double target =
              opts.solver.reflected
                  ? med3(c.h1(t, yvec[p], states[p], mu), b, c.h2(t, yvec[p], states[p], mu))
                  : b;
          ynew[p] = yvec[p] + opts.solver.implicit_damping * (target - yvec[p]);
          worst = std::max(worst, std::abs(ynew[p] - yvec[p]));
        }
        yvec = ynew;
        if (worst <= opts.solver.implicit_tol) {
          done = true;
          break;
        }
      }
      if (!done) throw ImplicitDiverge("joint_tree_oracle: coupled node solve did not converge");

      const MeasureSlice mu = MeasureSlice::from_samples(yvec);
      for (int p = 0; p < n; ++p) {
        base[p] = cont[p] + dt * c.f(t, yvec[p], zval[p], ua[p], mu);
        out.Y[p][m][j] = yvec[p];
        out.dK1[p][m][j] = std::max(yvec[p] - base[p], 0.0);
        out.dK2[p][m][j] = std::max(base[p] - yvec[p], 0.0);
      }
      out.law[m][j] = mu;
    }
  }

  for (int p = 0; p < n; ++p) out.roots.push_back(out.Y[p][0][0]);

  if (opts.run_games) {
    for (int p = 0; p < n; ++p) {
      GameInstance g;
      g.lattice = &out.views[p];
      g.coeffs = &c;
      g.node_flow = &out.law;
      g.opts = opts.solver;
      g.H1.assign(M, {});
      g.H2.assign(M, {});
      for (int m = 0; m < M; ++m) {
        const double t = grid.time(m);
        g.H1[m].resize(jn[m]);
        g.H2[m].resize(jn[m]);
        for (int j = 0; j < jn[m]; ++j) {
          const LatticeState& st = out.views[p].tree.levels[m][j].state;
          g.H1[m][j] = c.h1(t, out.Y[p][m][j], st, out.law[m][j]);
          g.H2[m][j] = c.h2(t, out.Y[p][m][j], st, out.law[m][j]);
        }
      }
      g.Xi = out.Y[p][M];

      out.games.push_back(brute_force_values(g, opts.max_label_maps, opts.max_pairs));
      DRBSDESolution shim;
      shim.backend = Backend::Tree;
      shim.first_step = 0;
      shim.Y = out.Y[p];
      SaddlePair sp = extract_saddle(g, shim, opts.saddle.tol);
      out.saddle_reports.push_back(verify_saddle(g, sp.tau, sp.sigma, opts.saddle));
      out.saddles.push_back(std::move(sp));
    }
  }
  return out;
}

namespace {

struct PayoffEval {
  double value = 0.0;
  std::vector<double> cash;  // per-scenario stopped payoff plus running driver
};

// Forward policy evaluation: walk each scenario to the pair's stop, pay the
// obstacle there (terminal cash at the horizon), and accumulate the running
// driver along the way with the system's own value/slope tables plugged in.
// No regression enters the payoff, so the per-scenario values are plain
// Monte Carlo draws and the paired standard error covers the whole
// estimator.
PayoffEval eval_rule_pair(const ParticleSystemSolution& sol, const CoefficientSet& c, int i,
                          const std::vector<std::vector<std::uint8_t>>& tau,
                          const std::vector<std::vector<std::uint8_t>>& sigma,
                          const std::vector<std::vector<double>>& H1,
                          const std::vector<std::vector<double>>& H2) {
  const int M = static_cast<int>(H1.size());
  const int S = static_cast<int>(sol.terminal[i].size());
  const NoiseLattice& lat = sol.lattices[i];
  const DRBSDESolution& part = sol.particles[i];
  const double dt = lat.grid.dt();

  PayoffEval pe;
  pe.cash.resize(S);
  double total = 0.0;
  for (int s = 0; s < S; ++s) {
    int mstar = M;
    double cash = sol.terminal[i][s];
    for (int m = 0; m < M; ++m) {
      if (tau[m][s]) {  // simultaneous stop pays the low table
        mstar = m;
        cash = H1[m][s];
        break;
      }
      if (sigma[m][s]) {
        mstar = m;
        cash = H2[m][s];
        break;
      }
    }
    double v = cash;
    for (int m = 0; m < mstar; ++m)
      v += dt * c.f(lat.grid.time(m), part.Y[m][s], part.Z[m][s], part.u_agg[m][s],
                    sol.law[m][s]);
    pe.cash[s] = v;
    total += v;
  }
  pe.value = total / S;
  return pe;
}

double paired_se(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t S = a.size();
  if (S < 2) return 0.0;
  double mean = 0.0;
  for (std::size_t s = 0; s < S; ++s) mean += a[s] - b[s];
  mean /= static_cast<double>(S);
  double var = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const double d = a[s] - b[s] - mean;
    var += d * d;
  }
  var /= static_cast<double>(S - 1);
  return std::sqrt(var / static_cast<double>(S));
}

using RuleTable = std::vector<std::vector<std::uint8_t>>;

// Realizable probe rules: each stops on a condition readable from the
// particle's running state or its value-band gap at the current step.
std::vector<RuleTable> deviation_rules(const ParticleSystemSolution& sol, int i, bool early_side,
                                       const std::vector<std::vector<double>>& H1,
                                       const std::vector<std::vector<double>>& H2,
                                       const RuleTable& candidate) {
  const int M = static_cast<int>(H1.size());
  const int S = static_cast<int>(sol.terminal[i].size());
  const double sqrt_T = std::sqrt(sol.lattices[i].grid.horizon);
  const auto& Y = sol.particles[i].Y;

  std::vector<RuleTable> rules;
  RuleTable zero(M, std::vector<std::uint8_t>(S, 0));
  rules.push_back(zero);  // hold to the horizon

  for (int m0 : {0, M / 2}) {
    RuleTable r = zero;
    std::fill(r[m0].begin(), r[m0].end(), 1);
    rules.push_back(std::move(r));
  }

  for (double eps : {1e-3, 0.05, 0.2}) {
    RuleTable r = zero;
    for (int m = 0; m < M; ++m)
      for (int s = 0; s < S; ++s)
        r[m][s] = early_side ? (Y[m][s] <= H1[m][s] + eps) : (Y[m][s] >= H2[m][s] - eps);
    rules.push_back(std::move(r));
  }

  for (double q : {0.0, 0.5}) {
    const double theta = (early_side ? -q : q) * sqrt_T;
    RuleTable r = zero;
    for (int m = 0; m < M; ++m)
      for (int s = 0; s < S; ++s) {
        const double b = sol.lattices[i].path_state(s, m).b;
        r[m][s] = early_side ? (b <= theta) : (b >= theta);
      }
    rules.push_back(std::move(r));
  }

  RuleTable delayed = candidate;
  std::fill(delayed[0].begin(), delayed[0].end(), 0);
  rules.push_back(std::move(delayed));
  return rules;
}

}  // namespace

ParticleSaddleReport particle_saddles(const ParticleSystemSolution& sol, const CoefficientSet& c,
                                      const ParticleSaddleOptions& opts) {
  if (!sol.converged) throw InvalidParam("particle_saddles: converged solution required");
  const int n = sol.n;
  const int M = sol.lattices.empty() ? 0 : sol.lattices[0].grid.steps;
  const int S = sol.terminal.empty() ? 0 : static_cast<int>(sol.terminal[0].size());

  ParticleSaddleReport rep;
  rep.rules.resize(n);
  rep.values.resize(n);
  rep.up_excess.assign(n, -std::numeric_limits<double>::infinity());
  rep.down_excess.assign(n, std::numeric_limits<double>::infinity());

  for (int i = 0; i < n; ++i) {
    const NoiseLattice& lat = sol.lattices[i];
    const auto& Y = sol.particles[i].Y;
    std::vector<std::vector<double>> H1(M, std::vector<double>(S));
    std::vector<std::vector<double>> H2(M, std::vector<double>(S));
    for (int m = 0; m < M; ++m) {
      const double t = lat.grid.time(m);
      for (int s = 0; s < S; ++s) {
        const LatticeState st = lat.path_state(s, m);
        H1[m][s] = c.h1(t, Y[m][s], st, sol.law[m][s]);
        H2[m][s] = c.h2(t, Y[m][s], st, sol.law[m][s]);
      }
    }

    ParticleStopRules& rules = rep.rules[i];
    rules.tau.assign(M, std::vector<std::uint8_t>(S, 0));
    rules.sigma.assign(M, std::vector<std::uint8_t>(S, 0));
    for (int m = 0; m < M; ++m)
      for (int s = 0; s < S; ++s) {
        rules.tau[m][s] = Y[m][s] <= H1[m][s] + opts.eq_tol;
        rules.sigma[m][s] = Y[m][s] >= H2[m][s] - opts.eq_tol;
      }

    const PayoffEval base = eval_rule_pair(sol, c, i, rules.tau, rules.sigma, H1, H2);
    rep.values[i] = base.value;

    const auto tau_devs = deviation_rules(sol, i, true, H1, H2, rules.tau);
    const auto sigma_devs = deviation_rules(sol, i, false, H1, H2, rules.sigma);
    rep.n_deviations = static_cast<int>(tau_devs.size());

    for (const RuleTable& r : tau_devs) {
      const PayoffEval pe = eval_rule_pair(sol, c, i, r, rules.sigma, H1, H2);
      const double margin = pe.value - base.value;
      const double se = paired_se(pe.cash, base.cash);
      rep.up_excess[i] = std::max(rep.up_excess[i], margin - 2.0 * se);
    }
    for (const RuleTable& r : sigma_devs) {
      const PayoffEval pe = eval_rule_pair(sol, c, i, rules.tau, r, H1, H2);
      const double margin = pe.value - base.value;
      const double se = paired_se(pe.cash, base.cash);
      rep.down_excess[i] = std::min(rep.down_excess[i], margin + 2.0 * se);
    }
  }

  rep.worst_up_excess = -std::numeric_limits<double>::infinity();
  rep.worst_down_excess = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    rep.worst_up_excess = std::max(rep.worst_up_excess, rep.up_excess[i]);
    rep.worst_down_excess = std::min(rep.worst_down_excess, rep.down_excess[i]);
  }
  rep.holds = rep.worst_up_excess <= opts.tol && rep.worst_down_excess >= -opts.tol;
  return rep;
}

}  // namespace mfdyn
