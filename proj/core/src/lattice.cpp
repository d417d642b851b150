#include "mfdyn/lattice.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "mfdyn/rng.hpp"

namespace mfdyn {

void TimeGrid::validate() const {
  if (steps < 1) throw InvalidGrid("TimeGrid: steps must be >= 1");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw InvalidGrid("TimeGrid: horizon must be positive and finite");
}

double JumpSpec::total_intensity() const {
  double s = 0.0;
  for (double l : intensities) s += l;
  return s;
}

void JumpSpec::validate(const TimeGrid& grid) const {
  if (marks.size() != intensities.size())
    throw InvalidIntensity("JumpSpec: marks and intensities differ in length");
  for (double l : intensities)
    if (l < 0.0 || !std::isfinite(l))
      throw InvalidIntensity("JumpSpec: intensities must be nonnegative and finite");
  if (total_intensity() * grid.dt() >= 1.0)
    throw InvalidIntensity("JumpSpec: (sum lambda_k) * dt >= 1, branch probabilities invalid");
}

int Tree::n_nonterminal_nodes() const {
  int n = 0;
  for (int m = 0; m + 1 < n_levels(); ++m) n += n_nodes(m);
  return n;
}

LatticeState NoiseLattice::path_state(int path, int m) const {
  const int M = grid.steps;
  const double sdt = std::sqrt(grid.dt());
  LatticeState st;
  st.jump_counts.assign(jumps.n_marks(), 0);
  for (int j = 0; j < m; ++j) {
    st.b += paths.sign(path, j, M) * sdt;
    for (int k = 0; k < jumps.n_marks(); ++k)
      st.jump_counts[k] += paths.jump(path, j, k, M);
  }
  return st;
}

NoiseLattice build_tree(const TimeGrid& grid, const JumpSpec& jumps) {
  grid.validate();
  jumps.validate(grid);

  const int M = grid.steps;
  const int K = jumps.n_marks();
  const double dt = grid.dt();
  const double sdt = std::sqrt(dt);
  const double p_nojump = 0.5 * (1.0 - jumps.total_intensity() * dt);

  NoiseLattice lat;
  lat.grid = grid;
  lat.jumps = jumps;
  lat.backend = Backend::Tree;

  Tree& tree = lat.tree;
  tree.levels.resize(M + 1);

  // State key at level m: (number of up-moves, jump counts per mark).
  using Key = std::vector<int>;
  std::map<Key, int> index;

  auto state_of = [&](int m, const Key& key) {
    LatticeState st;
    st.b = (2.0 * key[0] - m) * sdt;
    st.jump_counts.assign(key.begin() + 1, key.end());
    return st;
  };

  Key root(1 + K, 0);
  tree.levels[0].push_back(TreeNode{state_of(0, root), 1.0, {}});
  std::vector<Key> keys = {root};

  for (int m = 0; m < M; ++m) {
    std::map<Key, int> next_index;
    std::vector<Key> next_keys;
    auto child_id = [&](Key key) {
      auto it = next_index.find(key);
      if (it != next_index.end()) return it->second;
      const int id = static_cast<int>(next_keys.size());
      next_index.emplace(key, id);
      next_keys.push_back(key);
      return id;
    };

    for (std::size_t i = 0; i < tree.levels[m].size(); ++i) {
      TreeNode& node = tree.levels[m][i];
      const Key& key = keys[i];
      for (int up = 1; up >= 0; --up) {
        const double db = up ? sdt : -sdt;
        Key moved = key;
        moved[0] += up;
        node.branches.push_back(Branch{child_id(moved), p_nojump, db, -1});
        for (int k = 0; k < K; ++k) {
          Key jumped = moved;
          jumped[1 + k] += 1;
          node.branches.push_back(
              Branch{child_id(jumped), 0.5 * jumps.intensities[k] * dt, db, k});
        }
      }
    }

    tree.levels[m + 1].resize(next_keys.size());
    for (std::size_t i = 0; i < next_keys.size(); ++i)
      tree.levels[m + 1][i] = TreeNode{state_of(m + 1, next_keys[i]), 0.0, {}};
    for (const TreeNode& node : tree.levels[m])
      for (const Branch& br : node.branches)
        tree.levels[m + 1][br.child].prob += node.prob * br.prob;
    keys = std::move(next_keys);
  }
  return lat;
}

NoiseLattice sample_paths(const TimeGrid& grid, const JumpSpec& jumps,
                          int n_paths, std::uint64_t seed) {
  grid.validate();
  jumps.validate(grid);
  if (n_paths < 1) throw InvalidParam("sample_paths: n_paths must be >= 1");

  const int M = grid.steps;
  const int K = jumps.n_marks();
  const double dt = grid.dt();

  NoiseLattice lat;
  lat.grid = grid;
  lat.jumps = jumps;
  lat.backend = Backend::Paths;

  PathEnsemble& pe = lat.paths;
  pe.n_paths = n_paths;
  pe.seed = seed;
  pe.n_marks = K;
  pe.signs.resize(static_cast<std::size_t>(n_paths) * M);
  pe.jumps.resize(static_cast<std::size_t>(n_paths) * M * K);

  for (int s = 0; s < n_paths; ++s) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(s)));
    for (int m = 0; m < M; ++m) {
      pe.signs[static_cast<std::size_t>(s) * M + m] =
          static_cast<std::int8_t>(rng.sign());
      for (int k = 0; k < K; ++k)
        pe.jumps[(static_cast<std::size_t>(s) * M + m) * K + k] =
            rng.bernoulli(jumps.intensities[k] * dt) ? 1 : 0;
    }
  }
  return lat;
}

namespace {

// Exponent tuples of total degree <= deg in n_vars variables.
void collect_exponents(int n_vars, int deg, std::vector<int>& cur,
                       std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == n_vars) {
    out.push_back(cur);
    return;
  }
  int used = 0;
  for (int e : cur) used += e;
  for (int e = 0; e + used <= deg; ++e) {
    cur.push_back(e);
    collect_exponents(n_vars, deg, cur, out);
    cur.pop_back();
  }
}

std::vector<double> fit_projection(const NoiseLattice& lattice,
                                   const std::vector<double>& target, int m,
                                   int basis_degree,
                                   const std::vector<std::vector<double>>* extra = nullptr,
                                   const std::vector<unsigned char>* fit_mask = nullptr,
                                   int count_degree = -1) {
  const int n = lattice.paths.n_paths;
  if (n == 0) throw SingularRegression("regression: empty ensemble");
  if (static_cast<int>(target.size()) != n)
    throw LengthMismatch("regression: target size != n_paths");
  if (fit_mask && static_cast<int>(fit_mask->size()) != n)
    throw LengthMismatch("regression: mask size != n_paths");
  if (basis_degree < 0) basis_degree = 0;

  const int K = lattice.n_marks();
  std::vector<std::vector<int>> expo;
  std::vector<int> cur;
  collect_exponents(1 + K, basis_degree, cur, expo);
  if (count_degree >= 0) {
    std::erase_if(expo, [&](const std::vector<int>& e) {
      int cd = 0;
      for (int k = 0; k < K; ++k) cd += e[1 + k];
      return cd > count_degree;
    });
  }
  const int cols = static_cast<int>(expo.size());
  int extra_cols = 0;
  if (extra) {
    if (static_cast<int>(extra->size()) != n)
      throw LengthMismatch("regression: extra feature rows != n_paths");
    extra_cols = static_cast<int>(extra->front().size());
  }

  Eigen::MatrixXd X(n, cols + extra_cols);
  for (int s = 0; s < n; ++s) {
    const LatticeState st = lattice.path_state(s, m);
    for (int c = 0; c < cols; ++c) {
      double v = 1.0;
      for (int e = 0; e < expo[c][0]; ++e) v *= st.b;
      for (int k = 0; k < K; ++k)
        for (int e = 0; e < expo[c][1 + k]; ++e) v *= st.jump_counts[k];
      X(s, c) = v;
    }
    for (int c = 0; c < extra_cols; ++c) {
      if (static_cast<int>((*extra)[s].size()) != extra_cols)
        throw LengthMismatch("regression: ragged extra feature rows");
      X(s, cols + c) = (*extra)[s][c];
    }
  }

  Eigen::VectorXd beta;
  if (fit_mask) {
    int rows = 0;
    for (int s = 0; s < n; ++s) rows += (*fit_mask)[s] ? 1 : 0;
    if (rows == 0) throw EmptySample("regression: mask keeps no rows");
    Eigen::MatrixXd Xf(rows, cols + extra_cols);
    Eigen::VectorXd yf(rows);
    int r = 0;
    for (int s = 0; s < n; ++s) {
      if (!(*fit_mask)[s]) continue;
      Xf.row(r) = X.row(s);
      yf(r) = target[s];
      ++r;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xf);
    if (qr.rank() == 0) throw SingularRegression("regression: design has rank 0");
    beta = qr.solve(yf);
  } else {
    Eigen::VectorXd y(n);
    for (int s = 0; s < n; ++s) y(s) = target[s];
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() == 0) throw SingularRegression("regression: design has rank 0");
    beta = qr.solve(y);
  }
  const Eigen::VectorXd fit = X * beta;

  std::vector<double> out(n);
  for (int s = 0; s < n; ++s) out[s] = fit(s);
  return out;
}

}  // namespace

std::vector<double> regress_on_state(const NoiseLattice& lattice,
                                     const std::vector<double>& target, int m,
                                     int basis_degree,
                                     const std::vector<unsigned char>* fit_mask,
                                     int count_degree) {
  if (lattice.backend != Backend::Paths)
    throw BackendUnsupported("regress_on_state: path backend only");
  return fit_projection(lattice, target, m, basis_degree, nullptr, fit_mask, count_degree);
}

std::vector<double> regress_on_features(const std::vector<std::vector<double>>& extra,
                                        const NoiseLattice& lattice,
                                        const std::vector<double>& target, int m,
                                        int basis_degree,
                                        const std::vector<unsigned char>* fit_mask,
                                        int count_degree) {
  if (lattice.backend != Backend::Paths)
    throw BackendUnsupported("regress_on_features: path backend only");
  return fit_projection(lattice, target, m, basis_degree, &extra, fit_mask, count_degree);
}

std::vector<double> conditional_expectation(const NoiseLattice& lattice,
                                            const std::vector<double>& values_next,
                                            int m, int basis_degree) {
  if (m < 0 || m >= lattice.grid.steps)
    throw InvalidParam("conditional_expectation: step out of range");

  if (lattice.backend == Backend::Tree) {
    const Tree& tree = lattice.tree;
    if (values_next.size() != tree.levels[m + 1].size())
      throw LengthMismatch("conditional_expectation: values size != node count");
    std::vector<double> out(tree.levels[m].size(), 0.0);
    for (std::size_t i = 0; i < tree.levels[m].size(); ++i) {
      double acc = 0.0;
      for (const Branch& br : tree.levels[m][i].branches)
        acc += br.prob * values_next[br.child];
      out[i] = acc;
    }
    return out;
  }
  return fit_projection(lattice, values_next, m, basis_degree);
}

void enumerate_tree_paths(const Tree& tree,
                          const std::function<void(const std::vector<int>&, double)>& fn,
                          std::uint64_t max_paths) {
  std::uint64_t count = 1;
  for (int m = 0; m + 1 < tree.n_levels(); ++m) {
    std::uint64_t mx = 1;
    for (const TreeNode& nd : tree.levels[m]) mx = std::max<std::uint64_t>(mx, nd.branches.size());
    count *= mx;
    if (count > max_paths) throw TooLarge("enumerate_tree_paths: too many paths");
  }

  std::vector<int> nodes(tree.n_levels(), 0);
  std::function<void(int, double)> rec = [&](int m, double prob) {
    if (m + 1 == tree.n_levels()) {
      fn(nodes, prob);
      return;
    }
    const TreeNode& nd = tree.levels[m][nodes[m]];
    for (const Branch& br : nd.branches) {
      if (br.prob == 0.0) continue;
      nodes[m + 1] = br.child;
      rec(m + 1, prob * br.prob);
    }
  };
  rec(0, 1.0);
}

}  // namespace mfdyn
