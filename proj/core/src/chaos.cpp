#include "mfdyn/chaos.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mfdyn/rng.hpp"

namespace mfdyn {

namespace {

void mean_se(const std::vector<double>& xs, double& mean, double& se) {
  const std::size_t k = xs.size();
  mean = 0.0;
  se = 0.0;
  if (k == 0) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(k);
  if (k < 2) return;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(k - 1);
  se = std::sqrt(var / static_cast<double>(k));
}

// Non-increasing along the grid, allowing twice the pooled standard error.
bool monotone_2se(const std::vector<ChaosAggregate>& agg, double ChaosAggregate::*m,
                  double ChaosAggregate::*s) {
  for (std::size_t k = 0; k + 1 < agg.size(); ++k) {
    const double allow = 2.0 * std::sqrt(agg[k].*s * agg[k].*s + agg[k + 1].*s * agg[k + 1].*s);
    if (agg[k + 1].*m > agg[k].*m + allow) return false;
  }
  return true;
}

std::vector<std::vector<double>> cumulative_push(const DRBSDESolution& sol) {
  const int rows = sol.n_rows();
  const int cols = rows > 0 ? static_cast<int>(sol.Y[0].size()) : 0;
  std::vector<std::vector<double>> w(rows, std::vector<double>(cols, 0.0));
  for (int m = 1; m < rows; ++m)
    for (int s = 0; s < cols; ++s)
      w[m][s] = w[m - 1][s] + sol.dK1[m - 1][s] - sol.dK2[m - 1][s];
  return w;
}

}  // namespace

std::vector<DRBSDESolution> iid_copies(const MeasureFlow& reference,
                                       const ParticleSystemSolution& sys,
                                       const CoefficientSet& c, const SolverOptions& opts) {
  const BroadcastFlow view(reference);
  std::vector<DRBSDESolution> copies;
  copies.reserve(sys.n);
  for (int i = 0; i < sys.n; ++i) {
    const int M = sys.lattices[i].grid.steps;
    copies.push_back(solve_frozen_view(sys.lattices[i], c, view, 0, M, &sys.terminal[i], opts));
  }
  return copies;
}

std::vector<LlnRow> lln_experiment(const NoiseLattice& ref_lattice, const DRBSDESolution& ref_sol,
                                   double p, const std::vector<int>& n_grid,
                                   const std::vector<std::uint64_t>& seeds) {
  const int M = ref_sol.n_rows() - 1;
  std::vector<MeasureSlice> ref(M + 1);
  for (int m = 0; m <= M; ++m) ref[m] = law_from_solution(ref_lattice, ref_sol, m);
  const int n_ref = static_cast<int>(ref_sol.Y[0].size());

  std::vector<LlnRow> table;
  table.reserve(n_grid.size());
  for (int n : n_grid) {
    if (n < 1) throw InvalidParam("lln_experiment: n >= 1 required");
    std::vector<double> per_seed;
    per_seed.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
      Rng rng(substream_seed(seed, static_cast<std::uint64_t>(n)));
      std::vector<int> idx(n);
      for (int j = 0; j < n; ++j)
        idx[j] = std::min(n_ref - 1, static_cast<int>(rng.u01() * n_ref));
      double worst = 0.0;
      std::vector<double> draw(n);
      for (int m = 0; m <= M; ++m) {
        for (int j = 0; j < n; ++j) draw[j] = ref_sol.Y[m][idx[j]];
        worst = std::max(worst, wasserstein_p_pow(MeasureSlice::from_samples(draw), ref[m], p));
      }
      per_seed.push_back(worst);
    }
    LlnRow row;
    row.n = n;
    mean_se(per_seed, row.estimate, row.se);
    table.push_back(row);
  }
  return table;
}

ChaosReport chaos_gap_experiment(const std::vector<int>& n_grid, const CoefficientSet& c,
                                 const TerminalSampler& sampler, const ChaosConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds) {
  if (n_grid.empty() || seeds.empty())
    throw InvalidParam("chaos_gap_experiment: n-grid and seeds must be nonempty");

  ChaosReport rep;
  rep.n_grid = n_grid;
  rep.seeds = seeds;
  rep.n_ref = cfg.n_ref;
  rep.n_paths = cfg.n_paths;
  rep.p = c.p;
  rep.chaos_condition = check_chaos_condition(c);
  rep.exploratory = !rep.chaos_condition.holds;

  const NoiseLattice ref_lattice =
      sample_paths(cfg.grid, cfg.jumps, cfg.n_ref, substream_seed(cfg.ref_seed, 0x9eULL));
  const FixedPointResult ref = fixed_point(ref_lattice, c, cfg.fixed_point);
  const int M = cfg.grid.steps;
  const double p = c.p;

  ParticleOptions popts = cfg.particle;
  popts.n_paths = cfg.n_paths;

  for (int n : n_grid) {
    std::vector<double> g_runs, what_runs, wcomp_runs, marg2_runs;
    for (std::uint64_t seed : seeds) {
      const std::uint64_t master = substream_seed(seed, static_cast<std::uint64_t>(n));
      const ParticleSystemSolution sys =
          solve_particle_system(n, cfg.grid, cfg.jumps, c, sampler, master, popts);
      const std::vector<DRBSDESolution> copies = iid_copies(ref.flow, sys, c, popts.solver);
      const int S = cfg.n_paths;

      // Value gap per step, then its worst step.
      double g_run = 0.0;
      for (int m = 0; m <= M; ++m) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
          for (int s = 0; s < S; ++s)
            acc += std::pow(std::abs(sys.particles[i].Y[m][s] - copies[i].Y[m][s]), p);
        const double g_step = acc / (static_cast<double>(n) * S);
        rep.rows.push_back({n, seed, m, "y_gap_step", g_step});
        g_run = std::max(g_run, g_step);
      }
      rep.rows.push_back({n, seed, -1, "y_gap", g_run});
      g_runs.push_back(g_run);

      // Empirical-law distance: mean over scenarios of the worst step.
      double what_run = 0.0;
      std::vector<double> step_mean(M + 1, 0.0);
      for (int s = 0; s < S; ++s) {
        double worst = 0.0;
        for (int m = 0; m <= M; ++m) {
          const double d = wasserstein_p_pow(sys.law[m][s], ref.flow.at(m), p);
          step_mean[m] += d;
          worst = std::max(worst, d);
        }
        what_run += worst;
      }
      what_run /= S;
      for (int m = 0; m <= M; ++m)
        rep.rows.push_back({n, seed, m, "law_gap_step", step_mean[m] / S});
      rep.rows.push_back({n, seed, -1, "law_gap", what_run});
      what_runs.push_back(what_run);

      // Push-difference gap on the cumulative reflection balance: mean over
      // particles and scenarios at the worst step.
      double wcomp_run = 0.0;
      {
        std::vector<double> step_acc(M + 1, 0.0);
        for (int i = 0; i < n; ++i) {
          const auto wa = cumulative_push(sys.particles[i]);
          const auto wb = cumulative_push(copies[i]);
          for (int m = 0; m <= M; ++m)
            for (int s = 0; s < S; ++s) step_acc[m] += std::pow(std::abs(wa[m][s] - wb[m][s]), p);
        }
        for (int m = 0; m <= M; ++m)
          wcomp_run = std::max(wcomp_run, step_acc[m] / (static_cast<double>(n) * S));
      }
      rep.rows.push_back({n, seed, -1, "w_gap", wcomp_run});
      wcomp_runs.push_back(wcomp_run);

      // Joint law of the first two particles against the product sample.
      if (n >= 2) {
        auto joint2 = [&](int m) {
          std::vector<std::array<double, 2>> a(S), b(S);
          for (int s = 0; s < S; ++s) {
            a[s] = {sys.particles[0].Y[m][s], sys.particles[1].Y[m][s]};
            b[s] = {copies[0].Y[m][s], copies[1].Y[m][s]};
          }
          return wasserstein_2_points2d(a, b);
        };
        const double d0 = joint2(0);
        const double dmid = joint2(M / 2);
        rep.rows.push_back({n, seed, 0, "joint2_gap", d0});
        rep.rows.push_back({n, seed, M / 2, "joint2_gap", dmid});
        marg2_runs.push_back(d0);
      }
    }

    ChaosAggregate agg;
    agg.n = n;
    mean_se(g_runs, agg.g_mean, agg.g_se);
    mean_se(what_runs, agg.what_mean, agg.what_se);
    mean_se(wcomp_runs, agg.wcomp_mean, agg.wcomp_se);
    mean_se(marg2_runs, agg.marg2_mean, agg.marg2_se);
    rep.agg.push_back(agg);
  }

  rep.g_monotone = monotone_2se(rep.agg, &ChaosAggregate::g_mean, &ChaosAggregate::g_se);
  rep.what_monotone = monotone_2se(rep.agg, &ChaosAggregate::what_mean, &ChaosAggregate::what_se);
  const ChaosAggregate& first = rep.agg.front();
  const ChaosAggregate& last = rep.agg.back();
  rep.g_halved = last.g_mean <= 0.5 * first.g_mean;
  rep.what_halved = last.what_mean <= 0.5 * first.what_mean;
  rep.marg2_decreasing = rep.agg.size() < 2 || last.marg2_mean < first.marg2_mean ||
                         (last.marg2_mean == 0.0 && first.marg2_mean == 0.0);
  return rep;
}

}  // namespace mfdyn
