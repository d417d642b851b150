#include "mfdyn/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfdyn/rng.hpp"

namespace mfdyn {

StoppingRule StoppingRule::never(const Tree& tree) {
  StoppingRule r;
  const int M = tree.n_levels() - 1;
  r.stop.resize(M);
  for (int m = 0; m < M; ++m) r.stop[m].assign(tree.levels[m].size(), 0);
  return r;
}

StoppingRule StoppingRule::always(const Tree& tree) {
  StoppingRule r = never(tree);
  for (auto& row : r.stop) std::fill(row.begin(), row.end(), 1);
  return r;
}

namespace {

void require_tree(const GameInstance& g) {
  if (!g.lattice || g.lattice->backend != Backend::Tree)
    throw BackendUnsupported("game: tree backend only");
}

// Backward game pass for a fixed node labeling: 0 = continue (implicit
// driver step), 1 = stop at the low table, 2 = stop at the high table.
// labels are level-major; returns the root value.
double labeled_value(const GameInstance& g, const std::vector<std::uint8_t>& labels,
                     const std::vector<int>& offset) {
  const Tree& tree = g.lattice->tree;
  const int M = tree.n_levels() - 1;
  const double dt = g.lattice->grid.dt();
  const int K = g.lattice->n_marks();
  const CoefficientSet& c = *g.coeffs;

  std::vector<double> next = g.Xi, cur;
  for (int m = M - 1; m >= 0; --m) {
    const auto& level = tree.levels[m];
    const double t = g.lattice->grid.time(m);
    cur.resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      const std::uint8_t lab = labels[offset[m] + static_cast<int>(i)];
      if (lab == 1) {
        cur[i] = g.H1[m][i];
        continue;
      }
      if (lab == 2) {
        cur[i] = g.H2[m][i];
        continue;
      }
      const MeasureSlice& mu = g.law_at(m, i);
      double cont = 0.0, zsum = 0.0;
      std::vector<double> jump_sum(K, 0.0);
      for (const Branch& br : level[i].branches) {
        const double py = br.prob * next[br.child];
        cont += py;
        zsum += py * br.db;
        if (br.mark >= 0) jump_sum[br.mark] += py;
      }
      const double z = zsum / dt;
      double ua = 0.0;
      for (int k = 0; k < K; ++k) {
        const double lam = g.lattice->jumps.intensities[k];
        if (lam > 0.0) ua += (jump_sum[k] - lam * dt * cont) / dt;
      }
      double y = cont;
      int it = 0;
      for (; it < g.opts.implicit_max_iter; ++it) {
        const double nxt = cont + dt * c.f(t, y, z, ua, mu);
        const double delta = std::abs(nxt - y);
        y = nxt;
        if (delta <= g.opts.implicit_tol) break;
      }
      if (it == g.opts.implicit_max_iter)
        throw ImplicitDiverge("game: implicit continuation step did not converge");
      cur[i] = y;
    }
    next.swap(cur);
  }
  return next[0];
}

std::vector<int> level_offsets(const Tree& tree) {
  const int M = tree.n_levels() - 1;
  std::vector<int> offset(M + 1, 0);
  for (int m = 0; m < M; ++m) offset[m + 1] = offset[m] + tree.n_nodes(m);
  return offset;
}

std::vector<std::uint8_t> labels_from_rules(const GameInstance& g, const StoppingRule& tau,
                                            const StoppingRule& sigma,
                                            const std::vector<int>& offset) {
  const Tree& tree = g.lattice->tree;
  const int M = tree.n_levels() - 1;
  std::vector<std::uint8_t> labels(offset[M], 0);
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < tree.n_nodes(m); ++i) {
      if (tau.stop[m][i])
        labels[offset[m] + i] = 1;
      else if (sigma.stop[m][i])
        labels[offset[m] + i] = 2;
    }
  return labels;
}

}  // namespace

GameInstance make_game_instance(const NoiseLattice& lattice, const CoefficientSet& c,
                                const MeasureFlow& flow, const DRBSDESolution& sol,
                                const SolverOptions& opts) {
  if (lattice.backend != Backend::Tree)
    throw BackendUnsupported("make_game_instance: tree backend only");
  const int M = lattice.grid.steps;
  if (sol.backend != Backend::Tree || sol.first_step != 0 || sol.last_step() != M)
    throw InvalidParam("make_game_instance: full-horizon tree solution required");
  flow.validate(M);

  GameInstance g;
  g.lattice = &lattice;
  g.coeffs = &c;
  g.flow = &flow;
  g.opts = opts;
  g.H1.resize(M);
  g.H2.resize(M);
  for (int m = 0; m < M; ++m) {
    const auto& level = lattice.tree.levels[m];
    const double t = lattice.grid.time(m);
    g.H1[m].resize(level.size());
    g.H2[m].resize(level.size());
    for (std::size_t i = 0; i < level.size(); ++i) {
      g.H1[m][i] = c.h1(t, sol.Y[m][i], level[i].state, flow.at(m));
      g.H2[m][i] = c.h2(t, sol.Y[m][i], level[i].state, flow.at(m));
    }
  }
  g.Xi = sol.Y[sol.n_rows() - 1];
  return g;
}

double game_payoff(const GameInstance& g, const StoppingRule& tau, const StoppingRule& sigma) {
  require_tree(g);
  const auto offset = level_offsets(g.lattice->tree);
  return labeled_value(g, labels_from_rules(g, tau, sigma, offset), offset);
}

GameValues brute_force_values(const GameInstance& g, std::uint64_t max_label_maps,
                              std::uint64_t max_pairs) {
  require_tree(g);
  const Tree& tree = g.lattice->tree;
  const auto offset = level_offsets(tree);
  const int nt = offset.back();
  if (nt > 24) throw TooLarge("brute_force_values: too many stopping nodes");

  std::uint64_t n_maps = 1;
  for (int n = 0; n < nt; ++n) {
    n_maps *= 3;
    if (n_maps > max_label_maps) throw TooLarge("brute_force_values: label-map budget exceeded");
  }
  const std::uint64_t n_rules = 1ULL << nt;  // nt <= 24, no overflow below
  if (n_rules * n_rules > max_pairs)
    throw TooLarge("brute_force_values: pair budget exceeded");

  std::vector<std::uint64_t> pow3(nt + 1, 1);
  for (int n = 0; n < nt; ++n) pow3[n + 1] = pow3[n] * 3;

  // One backward pass per labeling.
  std::vector<double> G(n_maps);
  std::vector<std::uint8_t> labels(nt, 0);
  for (std::uint64_t code = 0; code < n_maps; ++code) {
    std::uint64_t rest = code;
    for (int n = 0; n < nt; ++n) {
      labels[n] = static_cast<std::uint8_t>(rest % 3);
      rest /= 3;
    }
    G[code] = labeled_value(g, labels, offset);
  }

  GameValues out;
  out.n_nonterminal = nt;
  out.n_label_maps = n_maps;

  // upper: late stopper commits a rule B, early stopper best-responds.
  // Gray-code walk keeps the label code update O(1) per visited pair.
  auto scan = [&](bool upper_side) {
    double outer = upper_side ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
    std::vector<std::int64_t> delta(nt);
    for (std::uint64_t fixed = 0; fixed < n_rules; ++fixed) {
      std::uint64_t code = 0;
      for (int n = 0; n < nt; ++n) {
        const bool bset = (fixed >> n) & 1ULL;
        if (upper_side) {
          // fixed = late rule: label 2 where set; flipping early bit n moves
          // the label to 1 (from 2: -pow3, from 0: +pow3).
          if (bset) code += 2 * pow3[n];
          delta[n] = bset ? -static_cast<std::int64_t>(pow3[n])
                          : static_cast<std::int64_t>(pow3[n]);
        } else {
          // fixed = early rule: label 1 where set; flipping late bit n only
          // matters where the early rule continues (label 0 -> 2).
          if (bset) code += pow3[n];
          delta[n] = bset ? 0 : 2 * static_cast<std::int64_t>(pow3[n]);
        }
      }
      double inner = upper_side ? -std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::infinity();
      std::uint64_t gray = 0;
      for (std::uint64_t j = 0;; ++j) {
        const double v = G[code];
        inner = upper_side ? std::max(inner, v) : std::min(inner, v);
        if (j + 1 >= n_rules) break;
        const int bit = __builtin_ctzll(j + 1);
        const std::uint64_t mask = 1ULL << bit;
        gray ^= mask;
        code = (gray & mask) ? code + delta[bit] : code - delta[bit];
      }
      outer = upper_side ? std::min(outer, inner) : std::max(outer, inner);
    }
    return outer;
  };

  out.upper = scan(true);
  out.lower = scan(false);

  // Cross-check: clamped backward recursion on the same payoff tables.
  {
    const int M = tree.n_levels() - 1;
    const double dt = g.lattice->grid.dt();
    const int K = g.lattice->n_marks();
    std::vector<double> next = g.Xi, cur;
    for (int m = M - 1; m >= 0; --m) {
      const auto& level = tree.levels[m];
      const double t = g.lattice->grid.time(m);
      cur.resize(level.size());
      for (std::size_t i = 0; i < level.size(); ++i) {
        const MeasureSlice& mu = g.law_at(m, i);
        double cont = 0.0, zsum = 0.0;
        std::vector<double> jump_sum(K, 0.0);
        for (const Branch& br : level[i].branches) {
          const double py = br.prob * next[br.child];
          cont += py;
          zsum += py * br.db;
          if (br.mark >= 0) jump_sum[br.mark] += py;
        }
        const double z = zsum / dt;
        double ua = 0.0;
        for (int k = 0; k < K; ++k) {
          const double lam = g.lattice->jumps.intensities[k];
          if (lam > 0.0) ua += (jump_sum[k] - lam * dt * cont) / dt;
        }
        double y = cont;
        for (int it = 0; it < g.opts.implicit_max_iter; ++it) {
          const double nxt = std::min(std::max(cont + dt * g.coeffs->f(t, y, z, ua, mu),
                                               g.H1[m][i]),
                                      g.H2[m][i]);
          const double dlt = std::abs(nxt - y);
          y = nxt;
          if (dlt <= g.opts.implicit_tol) break;
        }
        cur[i] = y;
      }
      next.swap(cur);
    }
    out.backward_induction = next[0];
  }
  return out;
}

SaddlePair extract_saddle(const GameInstance& g, const DRBSDESolution& sol, double tol) {
  require_tree(g);
  const Tree& tree = g.lattice->tree;
  const int M = tree.n_levels() - 1;
  SaddlePair sp;
  sp.tau = StoppingRule::never(tree);
  sp.sigma = StoppingRule::never(tree);
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < tree.n_nodes(m); ++i) {
      if (sol.Y[m][i] <= g.H1[m][i] + tol) sp.tau.stop[m][i] = 1;
      if (sol.Y[m][i] >= g.H2[m][i] - tol) sp.sigma.stop[m][i] = 1;
    }
  return sp;
}

SaddleReport verify_saddle(const GameInstance& g, const StoppingRule& tau,
                           const StoppingRule& sigma, const SaddleCheckOptions& opts) {
  require_tree(g);
  const Tree& tree = g.lattice->tree;
  const auto offset = level_offsets(tree);
  const int nt = offset.back();

  SaddleReport rep;
  rep.value = game_payoff(g, tau, sigma);
  rep.worst_up = -std::numeric_limits<double>::infinity();
  rep.worst_down = std::numeric_limits<double>::infinity();

  auto rule_from_mask = [&](std::uint64_t mask) {
    StoppingRule r = StoppingRule::never(tree);
    for (int m = 0; m + 1 < tree.n_levels(); ++m)
      for (int i = 0; i < tree.n_nodes(m); ++i)
        r.stop[m][i] = (mask >> (offset[m] + i)) & 1ULL;
    return r;
  };

  const bool exhaustive = nt <= 62 && (1ULL << nt) <= opts.max_exhaustive;
  rep.exhaustive = exhaustive;
  if (exhaustive) {
    const std::uint64_t n_rules = 1ULL << nt;
    for (std::uint64_t mask = 0; mask < n_rules; ++mask) {
      const StoppingRule r = rule_from_mask(mask);
      rep.worst_up = std::max(rep.worst_up, game_payoff(g, r, sigma) - rep.value);
      rep.worst_down = std::min(rep.worst_down, game_payoff(g, tau, r) - rep.value);
      rep.n_checked += 2;
    }
  } else {
    Rng rng(opts.seed);
    auto random_rule = [&]() {
      StoppingRule r = StoppingRule::never(tree);
      for (auto& row : r.stop)
        for (auto& v : row) v = rng.bernoulli(0.15) ? 1 : 0;
      return r;
    };
    std::vector<StoppingRule> probes = {StoppingRule::never(tree), StoppingRule::always(tree)};
    for (int s = 0; s < opts.n_samples; ++s) probes.push_back(random_rule());
    for (const StoppingRule& r : probes) {
      rep.worst_up = std::max(rep.worst_up, game_payoff(g, r, sigma) - rep.value);
      rep.worst_down = std::min(rep.worst_down, game_payoff(g, tau, r) - rep.value);
      rep.n_checked += 2;
    }
  }
  rep.holds = rep.worst_up <= opts.tol && rep.worst_down >= -opts.tol;
  return rep;
}

}  // namespace mfdyn
