#pragma once

#include <climits>
#include <span>
#include <vector>

#include "twostage/config.hpp"
#include "twostage/outcome_space.hpp"

namespace twostage {

/// Closed integer interval [lo, hi]; kNegInfBound / kPosInfBound stand for
/// the unbounded ends.
struct Band {
  static constexpr int kNegInfBound = INT_MIN / 4;
  static constexpr int kPosInfBound = INT_MAX / 4;

  int lo = kNegInfBound;
  int hi = kPosInfBound;

  static Band all() { return {}; }
  /// Open interval (a, b) over the integers.
  static Band open(int a, int b) { return {a + 1, b - 1}; }
  static Band at_least(int a) { return {a, kPosInfBound}; }
  static Band at_most(int b) { return {kNegInfBound, b}; }

  bool contains(int t) const { return lo <= t && t <= hi; }
  bool unbounded() const { return lo == kNegInfBound && hi == kPosInfBound; }
  friend bool operator==(const Band&, const Band&) = default;
};

/// Observed success counts: stage[j-1][k], k = 0 the control arm. Stage-two
/// entries of arms that did not continue are ignored.
struct TrialData {
  std::vector<int> stage1;
  std::vector<int> stage2;
};

/// T_kj = sum_{m<=j} x_km - sum_{m<=j} x_0m for k = 1..K.
std::vector<int> test_statistics(const TrialData& x, int stage);

struct BinomialDesign {
  int K = 2;
  int n = 0;
  int f1 = 0;
  int e1 = 0;
  int f2 = 0;
  int e2 = 1;
  AllocationRatios ratios;

  int f(int stage) const { return stage == 1 ? f1 : f2; }
  int e(int stage) const { return stage == 1 ? e1 : e2; }
  StageSizes sizes() const { return StageSizes::from(n, ratios); }
  int max_sample_size() const { return sizes().max_total(K); }

  /// Membership in the design space (ignoring the n range); throws
  /// validation_error naming the violated constraint.
  void validate() const;

  friend bool operator==(const BinomialDesign&, const BinomialDesign&) = default;
};

/// Interval of T_kj values consistent with outcome o.
Band band_E(int k, int j, const OutcomePair& o, const BinomialDesign& d);

/// P(psi, omega | p) by conditioning on the two control counts; arms are
/// conditionally independent given them.
double outcome_prob_binomial(const BinomialDesign& d, std::span<const double> p,
                             const OutcomePair& o);

/// Outcome probabilities in canonical enumerate_outcomes(K) order.
std::vector<double> outcome_distribution_binomial(const BinomialDesign& d,
                                                  std::span<const double> p);

/// Every (f, e) in the design space for this n, ascending (f1, e1, f2).
/// Empty when the ratios are not integral for n.
std::vector<BinomialDesign> enumerate_design_space(const TrialConfig& cfg, int n);

/// Executes the stage-wise decision rules on observed data.
OutcomePair conduct_binomial(const BinomialDesign& d, const TrialData& data);

/// Stage-one quantities for a fixed (n, f1, e1, p). Any second-stage
/// boundary can then be scored in O(n^2 K).
class BinomialKernel {
 public:
  BinomialKernel(int K, const StageSizes& sizes, int f1, int e1, std::span<const double> p);

  /// P(no arm in `capped` is rejected) when the second-stage rejection
  /// boundary is e2.
  double no_rejection(std::uint32_t capped, int e2) const;
  /// P(some arm rejected) with every arm counted.
  double rejection(int e2) const { return 1.0 - no_rejection(all_arms(), e2); }
  double ess() const;
  /// P(some arm rejected at stage one).
  double stage_one_rejection(std::uint32_t capped) const;

  std::uint32_t all_arms() const { return (1u << K_) - 1u; }

 private:
  struct ArmTables {
    // Indexed by x01.
    std::vector<double> reject1;    // P(T_k1 >= e1)
    std::vector<double> accept1;    // P(T_k1 <= f1)
    std::vector<double> continue1;  // P(f1 < T_k1 < e1)
    // reject2[x01][y - y_lo]: P(f1 < T_k1 < e1, T_k1 + x_k2 >= y)
    std::vector<std::vector<double>> reject2;
  };

  double reject2(const ArmTables& a, int x01, int y) const;

  int K_;
  StageSizes sizes_;
  int f1_, e1_;
  int y_lo_, y_hi_;
  std::vector<double> control1_, control2_;
  std::vector<const ArmTables*> arm_;
  std::vector<ArmTables> distinct_;
};

/// P(no arm in capped rejected) under p; capped = true nulls gives 1 - FWER.
double binomial_no_rejection(const BinomialDesign& d, std::span<const double> p,
                             std::uint32_t capped);
double binomial_fwer(const BinomialDesign& d, std::span<const double> p);
double binomial_fwp(const BinomialDesign& d, std::span<const double> p);
double binomial_ess(const BinomialDesign& d, std::span<const double> p);

}  // namespace twostage
