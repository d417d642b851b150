#pragma once

#include <array>
#include <vector>

#include "mfdyn/errors.hpp"

namespace mfdyn {

// Weighted finite sample representing a marginal law. Atoms are kept sorted
// (ties broken by weight) so that equal multisets produce bit-identical
// slices regardless of input order; cross-particle aggregates then cannot
// depend on particle labeling.
class MeasureSlice {
 public:
  MeasureSlice() = default;

  static MeasureSlice dirac(double x);
  // Equal-weight sample; sorts a copy of xs.
  static MeasureSlice from_samples(std::vector<double> xs);
  // Weighted sample; sorts, merges duplicate atoms, validates the weights.
  static MeasureSlice from_weighted(std::vector<double> xs, std::vector<double> ws);

  int size() const { return static_cast<int>(atoms_.size()); }
  bool empty() const { return atoms_.empty(); }
  double atom(int i) const { return atoms_[i]; }
  double weight(int i) const { return uniform_ ? 1.0 / size() : weights_[i]; }
  bool uniform() const { return uniform_; }
  const std::vector<double>& atoms() const { return atoms_; }

  double mean() const { return mean_; }
  double moment_p(double p) const;  // E|X|^p
  double quantile(double u) const;  // left-continuous inverse CDF

 private:
  std::vector<double> atoms_;
  std::vector<double> weights_;  // unused when uniform_
  bool uniform_ = true;
  double mean_ = 0.0;

  void finalize();
};

// One slice per time step, including the terminal step (M + 1 slices).
struct MeasureFlow {
  std::vector<MeasureSlice> slices;

  int n_slices() const { return static_cast<int>(slices.size()); }
  const MeasureSlice& at(int m) const { return slices[m]; }
  void validate(int n_steps) const;

  static MeasureFlow dirac(double x, int n_steps);
};

// Exact 1-D p-Wasserstein distance via the quantile coupling.
double wasserstein_p(const MeasureSlice& a, const MeasureSlice& b, double p);
// Same, but returns W_p^p without the final root.
double wasserstein_p_pow(const MeasureSlice& a, const MeasureSlice& b, double p);

// W_p^p between equal-size equal-weight samples by minimizing over all
// assignments; oracle for the quantile coupling. TooLarge above n = 8.
double wasserstein_p_pow_bruteforce(const std::vector<double>& x,
                                    const std::vector<double>& y, double p);

struct CouplingCheck {
  double w = 0.0;    // W_p^p(L_n[x], L_n[y])
  double rhs = 0.0;  // (1/n) sum |x_j - y_j|^p
  bool holds = false;
};

// Empirical-coupling inequality: W_p^p between empirical measures is bounded
// by the mean p-th power of the componentwise gaps.
CouplingCheck check_coupling_inequality(const std::vector<double>& x,
                                        const std::vector<double>& y, double p);

// Minimal total cost over perfect matchings of a square cost matrix
// (O(n^3) Hungarian algorithm with potentials).
double assignment_min_cost(const std::vector<std::vector<double>>& cost);

// W_2 between equal-size empirical measures on R^2 via exact assignment.
double wasserstein_2_points2d(const std::vector<std::array<double, 2>>& a,
                              const std::vector<std::array<double, 2>>& b);

}  // namespace mfdyn
