#include "mfdyn/drbsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace mfdyn {

namespace {

double med(double lo, double x, double hi) { return std::min(std::max(x, lo), hi); }

void check_window(const NoiseLattice& lattice, int first, int last,
                  const std::vector<double>* terminal) {
  const int M = lattice.grid.steps;
  if (first < 0 || last > M || first > last)
    throw InvalidParam("solve: window out of range");
  if (!terminal && last != M)
    throw InvalidParam("solve: interior window needs explicit terminal values");
}

void check_terminal_sandwich(const CoefficientSet& c, double t, double y,
                             const LatticeState& st, const MeasureSlice& mu, int col) {
  const double lo = c.h1(t, y, st, mu);
  const double hi = c.h2(t, y, st, mu);
  if (y < lo - 1e-9 || y > hi + 1e-9) {
    std::ostringstream os;
    os << "terminal value outside stop-payoff band at column " << col << ": " << lo
       << " <= " << y << " <= " << hi << " fails";
    throw InvalidTerminal(os.str());
  }
}

DRBSDESolution solve_tree(const NoiseLattice& lattice, const CoefficientSet& c,
                          const FlowView& view, int first, int last,
                          const std::vector<double>* terminal, const SolverOptions& o) {
  const Tree& tree = lattice.tree;
  const double dt = lattice.grid.dt();
  const int K = lattice.n_marks();
  const int rows = last - first + 1;

  DRBSDESolution sol;
  sol.backend = Backend::Tree;
  sol.first_step = first;
  sol.Y.resize(rows);
  sol.Z.resize(rows - 1);
  sol.U.resize(rows - 1);
  sol.u_agg.resize(rows - 1);
  sol.dK1.resize(rows - 1);
  sol.dK2.resize(rows - 1);

  const auto& leaves = tree.levels[last];
  std::vector<double>& yT = sol.Y[rows - 1];
  yT.resize(leaves.size());
  if (terminal) {
    if (terminal->size() != leaves.size())
      throw LengthMismatch("solve: terminal size != node count");
    yT = *terminal;
  } else {
    for (std::size_t i = 0; i < leaves.size(); ++i) yT[i] = c.xi(leaves[i].state);
  }
  if (o.reflected) {
    const double tT = lattice.grid.time(last);
    for (std::size_t i = 0; i < leaves.size(); ++i)
      check_terminal_sandwich(c, tT, yT[i], leaves[i].state, view.slice(last, static_cast<int>(i)),
                              static_cast<int>(i));
  }

  for (int m = last - 1; m >= first; --m) {
    const int r = m - first;
    const double t = lattice.grid.time(m);
    const auto& level = tree.levels[m];
    const std::vector<double>& ynext = sol.Y[r + 1];

    sol.Y[r].resize(level.size());
    sol.Z[r].resize(level.size());
    sol.U[r].assign(level.size(), std::vector<double>(K, 0.0));
    sol.u_agg[r].resize(level.size());
    sol.dK1[r].resize(level.size());
    sol.dK2[r].resize(level.size());

    for (std::size_t i = 0; i < level.size(); ++i) {
      const TreeNode& nd = level[i];
      double cont = 0.0, zsum = 0.0;
      std::vector<double> jump_sum(K, 0.0);
      for (const Branch& br : nd.branches) {
        const double py = br.prob * ynext[br.child];
        cont += py;
        zsum += py * br.db;
        if (br.mark >= 0) jump_sum[br.mark] += py;
      }
      const double z = zsum / dt;
      double ua = 0.0;
      for (int k = 0; k < K; ++k) {
        const double lam = lattice.jumps.intensities[k];
        const double uk = lam > 0.0 ? (jump_sum[k] - lam * dt * cont) / (lam * dt) : 0.0;
        sol.U[r][i][k] = uk;
        ua += lam * uk;
      }
      const ClampResult cr =
          clamp_implicit(cont, z, ua, t, dt, view.slice(m, static_cast<int>(i)), nd.state, c, o);
      sol.Y[r][i] = cr.y;
      sol.Z[r][i] = z;
      sol.u_agg[r][i] = ua;
      sol.dK1[r][i] = cr.dk1;
      sol.dK2[r][i] = cr.dk2;
    }
  }
  return sol;
}

DRBSDESolution solve_paths(const NoiseLattice& lattice, const CoefficientSet& c,
                           const FlowView& view, int first, int last,
                           const std::vector<double>* terminal, const SolverOptions& o) {
  const int N = lattice.paths.n_paths;
  const int M = lattice.grid.steps;
  const double dt = lattice.grid.dt();
  const double sdt = std::sqrt(dt);
  const int K = lattice.n_marks();
  const int rows = last - first + 1;

  DRBSDESolution sol;
  sol.backend = Backend::Paths;
  sol.first_step = first;
  sol.Y.resize(rows);
  sol.Z.resize(rows - 1);
  sol.U.resize(rows - 1);
  sol.u_agg.resize(rows - 1);
  sol.dK1.resize(rows - 1);
  sol.dK2.resize(rows - 1);

  std::vector<double>& yT = sol.Y[rows - 1];
  yT.resize(N);
  if (terminal) {
    if (static_cast<int>(terminal->size()) != N)
      throw LengthMismatch("solve: terminal size != n_paths");
    yT = *terminal;
  } else {
    for (int s = 0; s < N; ++s) yT[s] = c.xi(lattice.path_state(s, last));
  }
  if (o.reflected) {
    const double tT = lattice.grid.time(last);
    for (int s = 0; s < N; ++s)
      check_terminal_sandwich(c, tT, yT[s], lattice.path_state(s, last), view.slice(last, s), s);
  }

  auto project = [&](const std::vector<double>& target, int m) {
    if (o.extra_features) {
      const auto& ef = *o.extra_features;
      if (static_cast<int>(ef.size()) <= m)
        throw LengthMismatch("solve: extra features missing for a step");
      return regress_on_features(ef[m], lattice, target, m, o.basis_degree, nullptr,
                                 o.count_degree);
    }
    return regress_on_state(lattice, target, m, o.basis_degree, nullptr, o.count_degree);
  };

  std::vector<double> target(N);
  for (int m = last - 1; m >= first; --m) {
    const int r = m - first;
    const double t = lattice.grid.time(m);
    const std::vector<double>& ynext = sol.Y[r + 1];

    const std::vector<double> cont = project(ynext, m);
    for (int s = 0; s < N; ++s) target[s] = ynext[s] * lattice.paths.sign(s, m, M) / sdt;
    const std::vector<double> z = project(target, m);

    std::vector<std::vector<double>> u(K);
    for (int k = 0; k < K; ++k) {
      const double lam = lattice.jumps.intensities[k];
      if (lam > 0.0) {
        for (int s = 0; s < N; ++s)
          target[s] = ynext[s] * (lattice.paths.jump(s, m, k, M) - lam * dt) / (lam * dt);
        u[k] = project(target, m);
      } else {
        u[k].assign(N, 0.0);
      }
    }

    sol.Y[r].resize(N);
    sol.Z[r] = z;
    sol.U[r].assign(N, std::vector<double>(K, 0.0));
    sol.u_agg[r].resize(N);
    sol.dK1[r].resize(N);
    sol.dK2[r].resize(N);
    for (int s = 0; s < N; ++s) {
      double ua = 0.0;
      for (int k = 0; k < K; ++k) {
        sol.U[r][s][k] = u[k][s];
        ua += lattice.jumps.intensities[k] * u[k][s];
      }
      const ClampResult cr =
          clamp_implicit(cont[s], z[s], ua, t, dt, view.slice(m, s), lattice.path_state(s, m), c, o);
      sol.Y[r][s] = cr.y;
      sol.u_agg[r][s] = ua;
      sol.dK1[r][s] = cr.dk1;
      sol.dK2[r][s] = cr.dk2;
    }
  }
  return sol;
}

}  // namespace

double DRBSDESolution::root_value() const {
  if (Y.empty() || Y.front().empty()) throw EmptySample("root_value: empty solution");
  if (backend == Backend::Tree) return Y.front().front();
  double acc = 0.0;
  for (double v : Y.front()) acc += v;
  return acc / static_cast<double>(Y.front().size());
}

ClampResult clamp_implicit(double cont, double z, double u_agg, double t, double dt,
                           const MeasureSlice& mu, const LatticeState& st,
                           const CoefficientSet& c, const SolverOptions& o) {
  double y = cont;
  int it = 0;
  for (; it < o.implicit_max_iter; ++it) {
    const double base = cont + dt * c.f(t, y, z, u_agg, mu);
    const double tgt = o.reflected ? med(c.h1(t, y, st, mu), base, c.h2(t, y, st, mu)) : base;
    const double next = y + o.implicit_damping * (tgt - y);
    const double delta = std::abs(next - y);
    y = next;
    if (delta <= o.implicit_tol) {
      const double b2 = cont + dt * c.f(t, y, z, u_agg, mu);
      ClampResult r;
      r.y = y;
      r.dk1 = o.reflected ? std::max(y - b2, 0.0) : 0.0;
      r.dk2 = o.reflected ? std::max(b2 - y, 0.0) : 0.0;
      r.iterations = it + 1;
      return r;
    }
  }
  std::ostringstream os;
  os << "implicit node update did not converge at t = " << t;
  throw ImplicitDiverge(os.str());
}

DRBSDESolution solve_frozen_view(const NoiseLattice& lattice, const CoefficientSet& c,
                                 const FlowView& view, int first, int last,
                                 const std::vector<double>* terminal, const SolverOptions& opts) {
  check_window(lattice, first, last, terminal);
  if (lattice.backend == Backend::Tree)
    return solve_tree(lattice, c, view, first, last, terminal, opts);
  return solve_paths(lattice, c, view, first, last, terminal, opts);
}

DRBSDESolution solve_frozen(const NoiseLattice& lattice, const CoefficientSet& c,
                            const MeasureFlow& flow, const SolverOptions& opts) {
  flow.validate(lattice.grid.steps);
  BroadcastFlow view(flow);
  return solve_frozen_view(lattice, c, view, 0, lattice.grid.steps, nullptr, opts);
}

DRBSDESolution solve_frozen_window(const NoiseLattice& lattice, const CoefficientSet& c,
                                   const MeasureFlow& flow, int first, int last,
                                   const std::vector<double>& terminal,
                                   const SolverOptions& opts) {
  flow.validate(lattice.grid.steps);
  BroadcastFlow view(flow);
  return solve_frozen_view(lattice, c, view, first, last, &terminal, opts);
}

std::vector<std::vector<double>> f_expectation(const NoiseLattice& lattice,
                                               const CoefficientSet& c, const FlowView& view,
                                               const std::vector<std::vector<double>>& stop_payoff,
                                               const SolverOptions& opts) {
  const int M = lattice.grid.steps;
  const double dt = lattice.grid.dt();
  const int K = lattice.n_marks();
  if (static_cast<int>(stop_payoff.size()) != M + 1)
    throw LengthMismatch("f_expectation: need one payoff row per step");

  SolverOptions plain = opts;
  plain.reflected = false;

  std::vector<std::vector<double>> value(M + 1);
  value[M] = stop_payoff[M];
  for (double v : value[M])
    if (std::isnan(v)) throw InvalidParam("f_expectation: horizon row must be fully stopped");

  if (lattice.backend == Backend::Tree) {
    const Tree& tree = lattice.tree;
    if (value[M].size() != tree.levels[M].size())
      throw LengthMismatch("f_expectation: row size != node count");
    for (int m = M - 1; m >= 0; --m) {
      const auto& level = tree.levels[m];
      if (stop_payoff[m].size() != level.size())
        throw LengthMismatch("f_expectation: row size != node count");
      value[m].resize(level.size());
      const double t = lattice.grid.time(m);
      for (std::size_t i = 0; i < level.size(); ++i) {
        const double stop = stop_payoff[m][i];
        double cont = 0.0, zsum = 0.0;
        std::vector<double> jump_sum(K, 0.0);
        for (const Branch& br : level[i].branches) {
          const double py = br.prob * value[m + 1][br.child];
          cont += py;
          zsum += py * br.db;
          if (br.mark >= 0) jump_sum[br.mark] += py;
        }
        const double z = zsum / dt;
        double ua = 0.0;
        for (int k = 0; k < K; ++k) {
          const double lam = lattice.jumps.intensities[k];
          if (lam > 0.0) ua += (jump_sum[k] - lam * dt * cont) / dt;
        }
        const ClampResult cr = clamp_implicit(cont, z, ua, t, dt,
                                              view.slice(m, static_cast<int>(i)), level[i].state,
                                              c, plain);
        value[m][i] = std::isnan(stop) ? cr.y : stop;
      }
    }
    return value;
  }

  const int N = lattice.paths.n_paths;
  const int Mtot = M;
  const double sdt = std::sqrt(dt);
  if (static_cast<int>(value[M].size()) != N)
    throw LengthMismatch("f_expectation: row size != n_paths");
  std::vector<double> target(N);
  std::vector<unsigned char> alive(N);
  for (int m = M - 1; m >= 0; --m) {
    if (static_cast<int>(stop_payoff[m].size()) != N)
      throw LengthMismatch("f_expectation: row size != n_paths");
    const double t = lattice.grid.time(m);
    const std::vector<double>& ynext = value[m + 1];
    // Paths frozen by this step carry stale cash; keep them out of the fit
    // so the conditional-expectation sample only sees live dynamics.
    int n_alive = 0;
    for (int s = 0; s < N; ++s) {
      alive[s] = std::isnan(stop_payoff[m][s]) ? 1 : 0;
      n_alive += alive[s];
    }
    if (n_alive == 0) {
      value[m] = stop_payoff[m];
      continue;
    }
    auto project = [&](const std::vector<double>& tg) {
      if (opts.extra_features)
        return regress_on_features((*opts.extra_features)[m], lattice, tg, m, opts.basis_degree,
                                   &alive, opts.count_degree);
      return regress_on_state(lattice, tg, m, opts.basis_degree, &alive, opts.count_degree);
    };
    const std::vector<double> cont = project(ynext);
    for (int s = 0; s < N; ++s) target[s] = ynext[s] * lattice.paths.sign(s, m, Mtot) / sdt;
    const std::vector<double> z = project(target);
    std::vector<std::vector<double>> u(K);
    for (int k = 0; k < K; ++k) {
      const double lam = lattice.jumps.intensities[k];
      if (lam > 0.0) {
        for (int s = 0; s < N; ++s)
          target[s] = ynext[s] * (lattice.paths.jump(s, m, k, Mtot) - lam * dt) / (lam * dt);
        u[k] = project(target);
      }
    }
    value[m].resize(N);
    for (int s = 0; s < N; ++s) {
      double ua = 0.0;
      for (int k = 0; k < K; ++k)
        if (lattice.jumps.intensities[k] > 0.0) ua += lattice.jumps.intensities[k] * u[k][s];
      const ClampResult cr = clamp_implicit(cont[s], z[s], ua, t, dt, view.slice(m, s),
                                            lattice.path_state(s, m), c, plain);
      value[m][s] = std::isnan(stop_payoff[m][s]) ? cr.y : stop_payoff[m][s];
    }
  }
  return value;
}

void EstimateParams::validate(double lip) const {
  if (!(p >= 2.0)) throw InvalidParam("estimate: p must be >= 2");
  if (!(eta > 0.0) || !(beta > 0.0)) throw InvalidParam("estimate: eta, beta must be positive");
  if (lip > 0.0 && eta > 1.0 / (lip * lip) + 1e-15)
    throw InvalidParam("estimate: eta exceeds 1/lip^2");
  if (beta + 1e-12 < 2.0 * lip + 3.0 / eta)
    throw InvalidParam("estimate: beta below 2*lip + 3/eta");
}

std::vector<std::vector<double>> snell_envelope(const Tree& tree,
                                                const std::vector<std::vector<double>>& x) {
  const int M = tree.n_levels() - 1;
  if (static_cast<int>(x.size()) != M + 1)
    throw LengthMismatch("snell_envelope: need one row per level");
  std::vector<std::vector<double>> th(M + 1);
  th[M] = x[M];
  for (int m = M - 1; m >= 0; --m) {
    const auto& level = tree.levels[m];
    th[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      double cont = 0.0;
      for (const Branch& br : level[i].branches) cont += br.prob * th[m + 1][br.child];
      th[m][i] = std::max(x[m][i], cont);
    }
  }
  return th;
}

namespace {

// tab[m][i] = E[leaf value | node (m, i)], exact backward averaging.
std::vector<std::vector<double>> backward_expect(const Tree& tree,
                                                 const std::vector<double>& leaf) {
  const int M = tree.n_levels() - 1;
  std::vector<std::vector<double>> tab(M + 1);
  tab[M] = leaf;
  for (int m = M - 1; m >= 0; --m) {
    const auto& level = tree.levels[m];
    tab[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      double acc = 0.0;
      for (const Branch& br : level[i].branches) acc += br.prob * tab[m + 1][br.child];
      tab[m][i] = acc;
    }
  }
  return tab;
}

// tab[m][i] = E[sum_{s >= m} add[s][node_s] | node (m, i)].
std::vector<std::vector<double>> backward_suffix_sum(const Tree& tree,
                                                     const std::vector<std::vector<double>>& add) {
  const int M = tree.n_levels() - 1;
  std::vector<std::vector<double>> tab(M + 1);
  tab[M].assign(tree.levels[M].size(), 0.0);
  for (int m = M - 1; m >= 0; --m) {
    const auto& level = tree.levels[m];
    tab[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      double acc = 0.0;
      for (const Branch& br : level[i].branches) acc += br.prob * tab[m + 1][br.child];
      tab[m][i] = add[m][i] + acc;
    }
  }
  return tab;
}

}  // namespace

AprioriReport check_apriori_estimate(const NoiseLattice& lattice, const CoefficientSet& c1,
                                     const CoefficientSet& c2, const MeasureFlow& flow,
                                     const EstimateParams& ep, double slack,
                                     const SolverOptions& opts) {
  if (lattice.backend != Backend::Tree)
    throw BackendUnsupported("check_apriori_estimate: tree backend only");
  ep.validate(c1.C_f);
  flow.validate(lattice.grid.steps);

  SolverOptions plain = opts;
  plain.reflected = false;
  const DRBSDESolution s1 = solve_frozen(lattice, c1, flow, plain);
  const DRBSDESolution s2 = solve_frozen(lattice, c2, flow, plain);

  const Tree& tree = lattice.tree;
  const int M = lattice.grid.steps;
  const double dt = lattice.grid.dt();
  const double p = ep.p;

  // Terminal difference, p-th power, discounted.
  std::vector<double> leaf(tree.levels[M].size());
  const double eT = std::exp(ep.beta * lattice.grid.horizon);
  for (std::size_t i = 0; i < leaf.size(); ++i)
    leaf[i] = std::pow(std::abs(eT * (s1.Y[M][i] - s2.Y[M][i])), p);
  const auto term1 = backward_expect(tree, leaf);

  // Driver difference along the second solution, squared, discounted.
  std::vector<std::vector<double>> a(M + 1);
  a[M].assign(tree.levels[M].size(), 0.0);
  for (int m = 0; m < M; ++m) {
    const double t = lattice.grid.time(m);
    const double eb = std::exp(ep.beta * t);
    const auto& level = tree.levels[m];
    a[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      const double df = c1.f(t, s2.Y[m][i], s2.Z[m][i], s2.u_agg[m][i], flow.at(m)) -
                        c2.f(t, s2.Y[m][i], s2.Z[m][i], s2.u_agg[m][i], flow.at(m));
      a[m][i] = eb * eb * df * df * dt;
    }
  }

  std::vector<std::vector<double>> term2(M + 1);
  if (p == 2.0) {
    term2 = backward_suffix_sum(tree, a);
  } else {
    // E[(suffix sum)^{p/2} | node] by path enumeration.
    std::vector<std::vector<double>> acc(M + 1), mass(M + 1);
    for (int m = 0; m <= M; ++m) {
      acc[m].assign(tree.levels[m].size(), 0.0);
      mass[m].assign(tree.levels[m].size(), 0.0);
    }
    std::vector<double> suffix(M + 1);
    enumerate_tree_paths(tree, [&](const std::vector<int>& nodes, double prob) {
      suffix[M] = 0.0;
      for (int m = M - 1; m >= 0; --m) suffix[m] = suffix[m + 1] + a[m][nodes[m]];
      for (int m = 0; m <= M; ++m) {
        acc[m][nodes[m]] += prob * std::pow(suffix[m], p / 2.0);
        mass[m][nodes[m]] += prob;
      }
    });
    for (int m = 0; m <= M; ++m) {
      term2[m].resize(acc[m].size());
      for (std::size_t i = 0; i < acc[m].size(); ++i)
        term2[m][i] = mass[m][i] > 0.0 ? acc[m][i] / mass[m][i] : 0.0;
    }
  }

  AprioriReport rep;
  rep.slack = slack;
  rep.worst_gap = -std::numeric_limits<double>::infinity();
  const double front = std::pow(2.0, p / 2.0 - 1.0);
  const double etap = std::pow(ep.eta, p);
  for (int m = 0; m <= M; ++m) {
    const double eb = std::exp(ep.beta * lattice.grid.time(m));
    for (std::size_t i = 0; i < tree.levels[m].size(); ++i) {
      const double lhs = std::pow(std::abs(eb * (s1.Y[m][i] - s2.Y[m][i])), p);
      const double rhs = front * (term1[m][i] + etap * term2[m][i]);
      const double gap = lhs - rhs;
      if (gap > rep.worst_gap) {
        rep.worst_gap = gap;
        rep.worst_lhs = lhs;
        rep.worst_rhs = rhs;
        rep.worst_step = m;
        rep.worst_node = static_cast<int>(i);
      }
    }
  }
  rep.holds = rep.worst_gap <= slack;
  return rep;
}

KBoundReport check_k_bound(const NoiseLattice& lattice, const CoefficientSet& c,
                           const MeasureFlow& flow, const DRBSDESolution& sol,
                           const SolverOptions&) {
  if (lattice.backend != Backend::Tree || sol.backend != Backend::Tree)
    throw BackendUnsupported("check_k_bound: tree backend only");
  const int M = lattice.grid.steps;
  if (sol.first_step != 0 || sol.last_step() != M)
    throw InvalidParam("check_k_bound: full-horizon solution required");
  flow.validate(M);

  const Tree& tree = lattice.tree;
  const double dt = lattice.grid.dt();
  const double p = c.p;

  // Cap process split into nonnegative parts, then its stopping envelopes.
  std::vector<std::vector<double>> xp(M + 1), xm(M + 1);
  for (int m = 0; m <= M; ++m) {
    const double t = lattice.grid.time(m);
    const auto& level = tree.levels[m];
    xp[m].resize(level.size());
    xm[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      const double sp = c.Sp(t, level[i].state);
      xp[m][i] = std::max(sp, 0.0);
      xm[m][i] = std::max(-sp, 0.0);
    }
  }
  const auto th1 = snell_envelope(tree, xp);
  const auto th2 = snell_envelope(tree, xm);

  // Conditional expectations of terminal parts and driver parts.
  std::vector<double> xin(tree.levels[M].size()), xip(tree.levels[M].size());
  for (std::size_t i = 0; i < xin.size(); ++i) {
    xin[i] = std::max(-sol.Y[M][i], 0.0);
    xip[i] = std::max(sol.Y[M][i], 0.0);
  }
  const auto exi_n = backward_expect(tree, xin);
  const auto exi_p = backward_expect(tree, xip);

  std::vector<std::vector<double>> fneg(M + 1), fpos(M + 1);
  fneg[M].assign(tree.levels[M].size(), 0.0);
  fpos[M].assign(tree.levels[M].size(), 0.0);
  for (int m = 0; m < M; ++m) {
    const double t = lattice.grid.time(m);
    const auto& level = tree.levels[m];
    fneg[m].resize(level.size());
    fpos[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      const double fv = c.f(t, sol.Y[m][i], sol.Z[m][i], sol.u_agg[m][i], flow.at(m));
      fneg[m][i] = std::max(-fv, 0.0) * dt;
      fpos[m][i] = std::max(fv, 0.0) * dt;
    }
  }
  const auto rneg = backward_suffix_sum(tree, fneg);
  const auto rpos = backward_suffix_sum(tree, fpos);

  std::vector<std::vector<double>> big1(M + 1), big2(M + 1);
  for (int m = 0; m <= M; ++m) {
    const auto& level = tree.levels[m];
    big1[m].resize(level.size());
    big2[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      const double ind = m < M ? 1.0 : 0.0;
      big1[m][i] = ind * (th1[m][i] + exi_n[m][i]) + rneg[m][i];
      big2[m][i] = ind * (th2[m][i] + exi_p[m][i]) + rpos[m][i];
    }
  }

  KBoundReport rep;
  rep.mokobodzki_gap = 0.0;
  for (int m = 0; m <= M; ++m) {
    const double t = lattice.grid.time(m);
    const auto& level = tree.levels[m];
    for (std::size_t i = 0; i < level.size(); ++i) {
      const double mid = th1[m][i] - th2[m][i];
      const double lo = c.h1(t, sol.Y[m][i], level[i].state, flow.at(m));
      const double hi = c.h2(t, sol.Y[m][i], level[i].state, flow.at(m));
      rep.mokobodzki_gap = std::max(rep.mokobodzki_gap, std::max(lo - mid, mid - hi));
    }
  }
  rep.mokobodzki_ok = rep.mokobodzki_gap <= 1e-9;

  double k1 = 0.0, k2 = 0.0, n1 = 0.0, n2 = 0.0;
  enumerate_tree_paths(tree, [&](const std::vector<int>& nodes, double prob) {
    double s1 = 0.0, s2 = 0.0, m1 = 0.0, m2 = 0.0;
    for (int m = 0; m < M; ++m) {
      s1 += sol.dK1[m][nodes[m]];
      s2 += sol.dK2[m][nodes[m]];
    }
    for (int m = 0; m <= M; ++m) {
      m1 = std::max(m1, big1[m][nodes[m]]);
      m2 = std::max(m2, big2[m][nodes[m]]);
    }
    k1 += prob * std::pow(s1, p);
    k2 += prob * std::pow(s2, p);
    n1 += prob * std::pow(m1, p);
    n2 += prob * std::pow(m2, p);
  });

  rep.k1_moment = k1;
  rep.k2_moment = k2;
  rep.theta1_norm_pow = n1;
  rep.theta2_norm_pow = n2;
  const double pp = std::pow(p, p);
  rep.bound1 = pp * n1;
  rep.bound2 = pp * n2;
  rep.holds1 = k1 <= rep.bound1 * (1.0 + 1e-12) + 1e-15;
  rep.holds2 = k2 <= rep.bound2 * (1.0 + 1e-12) + 1e-15;
  rep.holds = rep.holds1 && rep.holds2;
  return rep;
}

}  // namespace mfdyn
