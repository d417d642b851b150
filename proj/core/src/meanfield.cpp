#include "mfdyn/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfdyn {

ConditionCheck check_contraction_condition(const CoefficientSet& c) {
  ConditionCheck out;
  out.lhs = c.lipschitz_sum_pow();
  out.threshold = std::pow(2.0, 3.0 - 2.5 * c.p);
  out.holds = out.lhs < out.threshold;
  return out;
}

ConditionCheck check_chaos_condition(const CoefficientSet& c) {
  ConditionCheck out;
  out.lhs = std::pow(2.0, c.p / 2.0 - 1.0) * std::pow(7.0, c.p - 1.0) * c.lipschitz_sum_pow();
  out.threshold = 1.0;
  out.holds = out.lhs < out.threshold;
  return out;
}

MeasureSlice law_from_solution(const NoiseLattice& lattice, const DRBSDESolution& sol, int m) {
  const auto& row = sol.values_at(m);
  if (lattice.backend == Backend::Paths) return MeasureSlice::from_samples(row);
  const auto& level = lattice.tree.levels[m];
  std::vector<double> w(level.size());
  double total = 0.0;
  for (std::size_t i = 0; i < level.size(); ++i) total += level[i].prob;
  for (std::size_t i = 0; i < level.size(); ++i) w[i] = level[i].prob / total;
  return MeasureSlice::from_weighted(row, w);
}

PsiResult apply_psi(const NoiseLattice& lattice, const CoefficientSet& c,
                    const MeasureFlow& flow, const SolverOptions& opts) {
  PsiResult out;
  out.solution = solve_frozen(lattice, c, flow, opts);
  const int M = lattice.grid.steps;
  out.flow.slices.resize(M + 1);
  for (int m = 0; m <= M; ++m) out.flow.slices[m] = law_from_solution(lattice, out.solution, m);
  return out;
}

namespace {

MeasureSlice mix_slices(const MeasureSlice& old_s, const MeasureSlice& new_s, double d) {
  std::vector<double> xs, ws;
  xs.reserve(old_s.size() + new_s.size());
  ws.reserve(old_s.size() + new_s.size());
  for (int i = 0; i < old_s.size(); ++i) {
    xs.push_back(old_s.atom(i));
    ws.push_back((1.0 - d) * old_s.weight(i));
  }
  for (int i = 0; i < new_s.size(); ++i) {
    xs.push_back(new_s.atom(i));
    ws.push_back(d * new_s.weight(i));
  }
  return MeasureSlice::from_weighted(std::move(xs), std::move(ws));
}

double flow_distance(const MeasureFlow& a, const MeasureFlow& b, double p, int lo, int hi) {
  double worst = 0.0;
  for (int m = lo; m <= hi; ++m)
    worst = std::max(worst, wasserstein_p(a.at(m), b.at(m), p));
  return worst;
}

[[noreturn]] void no_convergence(const char* what, int iters, double residual, double tol) {
  std::ostringstream os;
  os << what << ": residual " << residual << " above tol " << tol << " after " << iters
     << " iterations";
  throw NoConvergence(os.str());
}

FixedPointResult fixed_point_global(const NoiseLattice& lattice, const CoefficientSet& c,
                                    const FixedPointOptions& o) {
  const int M = lattice.grid.steps;
  FixedPointResult res;
  MeasureFlow flow = MeasureFlow::dirac(o.init_value, M);
  for (int it = 1; it <= o.max_iter; ++it) {
    PsiResult psi = apply_psi(lattice, c, flow, o.solver);
    const double residual = flow_distance(psi.flow, flow, c.p, 0, M);
    res.history.push_back(residual);
    res.iterations = it;
    res.residual = residual;
    if (o.damping >= 1.0) {
      flow = std::move(psi.flow);
    } else {
      for (int m = 0; m <= M; ++m)
        flow.slices[m] = mix_slices(flow.at(m), psi.flow.at(m), o.damping);
    }
    if (residual <= o.tol) {
      res.converged = true;
      res.flow = std::move(flow);
      res.solution = solve_frozen(lattice, c, res.flow, o.solver);
      return res;
    }
  }
  no_convergence("fixed_point", res.iterations, res.residual, o.tol);
}

FixedPointResult fixed_point_windowed(const NoiseLattice& lattice, const CoefficientSet& c,
                                      const FixedPointOptions& o) {
  const int M = lattice.grid.steps;
  const int w = o.window_steps > 0 ? std::min(o.window_steps, M) : M;
  const int n_windows = (M + w - 1) / w;
  const double inner_tol = o.tol / (2.0 * n_windows);

  FixedPointResult res;
  MeasureFlow flow = MeasureFlow::dirac(o.init_value, M);

  // Terminal values at the horizon and their law.
  std::vector<double> terminal;
  if (lattice.backend == Backend::Tree) {
    const auto& leaves = lattice.tree.levels[M];
    terminal.resize(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) terminal[i] = c.xi(leaves[i].state);
  } else {
    terminal.resize(lattice.paths.n_paths);
    for (int s = 0; s < lattice.paths.n_paths; ++s)
      terminal[s] = c.xi(lattice.path_state(s, M));
  }

  int total_iters = 0;
  BroadcastFlow view(flow);
  for (int b = M; b > 0; b -= w) {
    const int a = std::max(0, b - w);
    // The boundary law is pinned by the pasted terminal values.
    {
      DRBSDESolution tmp;
      tmp.backend = lattice.backend;
      tmp.first_step = b;
      tmp.Y = {terminal};
      flow.slices[b] = law_from_solution(lattice, tmp, b);
    }
    DRBSDESolution win;
    bool ok = false;
    while (total_iters < o.max_iter) {
      ++total_iters;
      win = solve_frozen_view(lattice, c, view, a, b, &terminal, o.solver);
      MeasureFlow fresh = flow;  // only rows a..b-1 change
      for (int m = a; m < b; ++m) fresh.slices[m] = law_from_solution(lattice, win, m);
      const double residual = flow_distance(fresh, flow, c.p, a, b - 1);
      res.history.push_back(residual);
      if (o.damping >= 1.0) {
        for (int m = a; m < b; ++m) flow.slices[m] = std::move(fresh.slices[m]);
      } else {
        for (int m = a; m < b; ++m)
          flow.slices[m] = mix_slices(flow.at(m), fresh.at(m), o.damping);
      }
      if (residual <= inner_tol) {
        ok = true;
        break;
      }
    }
    if (!ok)
      no_convergence("fixed_point (window)", total_iters,
                     res.history.empty() ? 0.0 : res.history.back(), inner_tol);
    terminal = win.values_at(a);
  }

  // Global consistency of the pasted flow.
  PsiResult psi = apply_psi(lattice, c, flow, o.solver);
  res.residual = flow_distance(psi.flow, flow, c.p, 0, M);
  res.iterations = total_iters;
  res.converged = res.residual <= o.tol;
  res.flow = std::move(flow);
  res.solution = std::move(psi.solution);
  if (!res.converged)
    no_convergence("fixed_point (pasted)", res.iterations, res.residual, o.tol);
  return res;
}

}  // namespace

FixedPointResult fixed_point(const NoiseLattice& lattice, const CoefficientSet& c,
                             const FixedPointOptions& opts) {
  if (opts.mode == FixedPointMode::Global) return fixed_point_global(lattice, c, opts);
  return fixed_point_windowed(lattice, c, opts);
}

MeanFieldValue mean_field_value_and_saddle(const NoiseLattice& lattice, const CoefficientSet& c,
                                           const FixedPointOptions& fp_opts,
                                           const SaddleCheckOptions& saddle_opts) {
  if (lattice.backend != Backend::Tree)
    throw BackendUnsupported("mean_field_value_and_saddle: tree backend only");
  MeanFieldValue out;
  out.fixed_point = fixed_point(lattice, c, fp_opts);
  out.value = out.fixed_point.solution.root_value();
  GameInstance g = make_game_instance(lattice, c, out.fixed_point.flow, out.fixed_point.solution,
                                      fp_opts.solver);
  out.saddle = extract_saddle(g, out.fixed_point.solution, saddle_opts.tol);
  out.report = verify_saddle(g, out.saddle.tau, out.saddle.sigma, saddle_opts);
  out.verified = true;
  return out;
}

}  // namespace mfdyn
