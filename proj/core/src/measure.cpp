#include "mfdyn/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mfdyn {

namespace {

double pow_p(double x, double p) {
  const double a = std::abs(x);
  if (p == 1.0) return a;
  if (p == 2.0) return a * a;
  return std::pow(a, p);
}

}  // namespace

void MeasureSlice::finalize() {
  mean_ = 0.0;
  for (int i = 0; i < size(); ++i) mean_ += weight(i) * atoms_[i];
}

MeasureSlice MeasureSlice::dirac(double x) {
  MeasureSlice s;
  s.atoms_ = {x};
  s.uniform_ = true;
  s.finalize();
  return s;
}

MeasureSlice MeasureSlice::from_samples(std::vector<double> xs) {
  if (xs.empty()) throw EmptySample("MeasureSlice: empty sample");
  std::sort(xs.begin(), xs.end());
  MeasureSlice s;
  s.atoms_ = std::move(xs);
  s.uniform_ = true;
  s.finalize();
  return s;
}

MeasureSlice MeasureSlice::from_weighted(std::vector<double> xs,
                                         std::vector<double> ws) {
  if (xs.empty()) throw EmptySample("MeasureSlice: empty sample");
  if (xs.size() != ws.size())
    throw LengthMismatch("MeasureSlice: atom/weight length mismatch");
  double total = 0.0;
  for (double w : ws) {
    if (w < 0.0 || !std::isfinite(w))
      throw InvalidParam("MeasureSlice: weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw InvalidParam("MeasureSlice: weights must sum to 1");

  std::vector<int> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (xs[a] != xs[b]) return xs[a] < xs[b];
    return ws[a] < ws[b];
  });

  MeasureSlice s;
  s.uniform_ = false;
  for (int idx : order) {
    if (ws[idx] == 0.0) continue;
    if (!s.atoms_.empty() && s.atoms_.back() == xs[idx]) {
      s.weights_.back() += ws[idx];
    } else {
      s.atoms_.push_back(xs[idx]);
      s.weights_.push_back(ws[idx]);
    }
  }
  if (s.atoms_.empty()) {
    // All weights were zero after validation; keep a single zero-mass guard.
    throw InvalidParam("MeasureSlice: all weights zero");
  }
  s.finalize();
  return s;
}

double MeasureSlice::moment_p(double p) const {
  double acc = 0.0;
  for (int i = 0; i < size(); ++i) acc += weight(i) * pow_p(atoms_[i], p);
  return acc;
}

double MeasureSlice::quantile(double u) const {
  if (empty()) throw EmptySample("MeasureSlice: quantile of empty slice");
  double cum = 0.0;
  for (int i = 0; i < size(); ++i) {
    cum += weight(i);
    if (u <= cum + 1e-15) return atoms_[i];
  }
  return atoms_.back();
}

void MeasureFlow::validate(int n_steps) const {
  if (n_slices() != n_steps + 1)
    throw LengthMismatch("MeasureFlow: expected one slice per step incl. terminal");
  for (const MeasureSlice& s : slices)
    if (s.empty()) throw EmptySample("MeasureFlow: empty slice");
}

MeasureFlow MeasureFlow::dirac(double x, int n_steps) {
  MeasureFlow f;
  f.slices.assign(n_steps + 1, MeasureSlice::dirac(x));
  return f;
}

double wasserstein_p_pow(const MeasureSlice& a, const MeasureSlice& b, double p) {
  if (a.empty() || b.empty()) throw EmptySample("wasserstein_p: empty slice");
  if (p < 1.0) throw InvalidParam("wasserstein_p: p must be >= 1");

  // Quantile coupling: sweep the merged weight grid of both inverse CDFs.
  int i = 0, j = 0;
  double ra = a.weight(0), rb = b.weight(0);
  double cost = 0.0;
  while (true) {
    const double step = std::min(ra, rb);
    cost += step * pow_p(a.atom(i) - b.atom(j), p);
    ra -= step;
    rb -= step;
    const bool last_a = (i + 1 == a.size());
    const bool last_b = (j + 1 == b.size());
    if (ra <= 1e-15 && !last_a) ra = a.weight(++i);
    if (rb <= 1e-15 && !last_b) rb = b.weight(++j);
    if ((ra <= 1e-15 && last_a) || (rb <= 1e-15 && last_b)) break;
  }
  return cost;
}

double wasserstein_p(const MeasureSlice& a, const MeasureSlice& b, double p) {
  return std::pow(wasserstein_p_pow(a, b, p), 1.0 / p);
}

double wasserstein_p_pow_bruteforce(const std::vector<double>& x,
                                    const std::vector<double>& y, double p) {
  if (x.empty() || y.empty()) throw EmptySample("bruteforce: empty sample");
  if (x.size() != y.size()) throw LengthMismatch("bruteforce: unequal sizes");
  if (x.size() > 8) throw TooLarge("bruteforce: n > 8");

  std::vector<int> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) c += pow_p(x[i] - y[perm[i]], p);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(x.size());
}

CouplingCheck check_coupling_inequality(const std::vector<double>& x,
                                        const std::vector<double>& y, double p) {
  if (x.size() != y.size())
    throw LengthMismatch("check_coupling_inequality: unequal lengths");
  if (x.empty()) throw EmptySample("check_coupling_inequality: empty input");

  CouplingCheck out;
  out.w = wasserstein_p_pow(MeasureSlice::from_samples(x),
                            MeasureSlice::from_samples(y), p);
  double rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rhs += pow_p(x[i] - y[i], p);
  out.rhs = rhs / static_cast<double>(x.size());
  out.holds = out.w <= out.rhs + 1e-12;
  return out;
}

double assignment_min_cost(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) throw EmptySample("assignment_min_cost: empty matrix");
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != n)
      throw LengthMismatch("assignment_min_cost: matrix not square");

  const double inf = std::numeric_limits<double>::infinity();
  // Potentials-based Hungarian algorithm, rows assigned one at a time.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[col 1..n] = row, 0 = free
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    std::vector<int> way(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[match[j] - 1][j - 1];
  return total;
}

double wasserstein_2_points2d(const std::vector<std::array<double, 2>>& a,
                              const std::vector<std::array<double, 2>>& b) {
  if (a.empty() || b.empty()) throw EmptySample("wasserstein_2_points2d: empty");
  if (a.size() != b.size())
    throw LengthMismatch("wasserstein_2_points2d: unequal sizes");

  const int n = static_cast<int>(a.size());
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = a[i][0] - b[j][0];
      const double dy = a[i][1] - b[j][1];
      cost[i][j] = dx * dx + dy * dy;
    }
  return std::sqrt(assignment_min_cost(cost) / n);
}

}  // namespace mfdyn
