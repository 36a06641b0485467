#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "twostage/config.hpp"

namespace twostage {

/// rho_kj = 1 iff arm k is present in the stage.
struct StagePresence {
  std::vector<int> rho;

  static StagePresence all(int K) { return {std::vector<int>(K, 1)}; }
  static StagePresence from_mask(int K, std::uint32_t mask);
  int count() const;
  std::uint32_t mask() const;
};

/// f(x_j | z_j, rho_j, theta): the PMF of the stage-j counts x = (x_0..x_K)
/// given their total z. Arms with theta on {0, +inf} are handled by support
/// restriction. Throws when z lies outside [0, total stage allocation].
double conditional_pmf(std::span<const int> x, int z, const StagePresence& rho,
                       std::span<const double> theta, const StageSizes& sizes, int stage);

/// g(z_j | p, rho_j): PMF of the stage-j success total.
double g_pmf(int z, std::span<const double> p, const StagePresence& rho, const StageSizes& sizes,
             int stage);
std::vector<double> g_pmf_vector(std::span<const double> p, const StagePresence& rho,
                                 const StageSizes& sizes, int stage);

/// Discrete convolution of two nonnegative sequences.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

/// Visits every vector x with 0 <= x[i] <= limits[i].
void for_each_lattice(std::span<const int> limits, const std::function<void(std::span<const int>)>& fn);

/// Second-stage table
///   U(z2, c) = sum_{x02} w0(x02) sum_{x_k <= c_k - 1 + x02 for capped k}
///              prod_k w_k(x_k) F(z2 - x02 - sum_k x_k)
/// where F convolves the weights of the uncapped ("free") arms. A continuing
/// arm with first-stage statistic t is not rejected at boundary e2 iff its
/// count is at most (e2 - t) - 1 + x02, so c_k = e2 - t_k. With binomial
/// weights U is an unconditional probability; with odds weights, dividing by
/// the uncapped total gives the conditional one.
class StageTwoTable {
 public:
  StageTwoTable(std::vector<double> control_w, std::vector<std::vector<double>> capped_w,
                std::vector<double> free_total);

  int capped() const { return static_cast<int>(capped_.size()); }
  int z_max() const { return z_max_; }
  int c_lo() const { return c_lo_; }
  int c_hi() const { return c_hi_; }

  /// c is clamped to [c_lo, c_hi]; outside [0, z_max] the value is 0.
  double at(int z2, std::span<const int> c) const;
  /// U with no caps, i.e. the total weight of z2.
  double total(int z2) const;

 private:
  void fill_dense();
  double compute(int z2, std::span<const int> c) const;
  double nested(int R, std::span<const int> caps) const;

  std::vector<double> control_;
  std::vector<std::vector<double>> capped_;
  std::vector<double> free_;
  int arm_size_ = 0;
  int z_max_ = 0;
  int c_lo_ = 0, c_hi_ = 0;
  // prefix_[j][R * A^j + index(a_1..a_j)] = sum over x_i <= a_i (i <= j) of
  // prod w_i(x_i) F(R - sum x_i); built for j up to dense_levels_.
  std::vector<std::vector<double>> prefix_;
  int dense_levels_ = 0;
  std::vector<double> totals_;
  std::vector<double> dense_;  // populated when capped() <= 2
  mutable std::mutex memo_mutex_;
  mutable std::unordered_map<std::uint64_t, double> memo_;
};

}  // namespace twostage
