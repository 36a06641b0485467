#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace twostage {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// log C(n, x); -inf outside 0 <= x <= n. C(0, x) is 1 iff x == 0.
double log_binom_coeff(int n, int x);

/// b(x | n, p), exact to rounding, zero outside the support.
double binom_pmf(int x, int n, double p);

/// Full PMF vector of Bin(n, p), length n + 1.
std::vector<double> binom_pmf_vector(int n, double p);

/// Running sums: out[i] = sum_{j <= i} pmf[j], length pmf.size().
std::vector<double> cumulative(std::span<const double> pmf);

/// Conditional-likelihood weights C(n, x) * theta^x for x = 0..n, rescaled by
/// their maximum so that extreme odds ratios cannot overflow. theta = 0 keeps
/// only x = 0; theta = +inf keeps only x = n.
std::vector<double> odds_weights(int n, double theta);

/// Odds ratios theta_k = p_k (1 - p_0) / (p_0 (1 - p_k)) for k = 1..K.
struct OddsRatioVector {
  std::vector<double> theta;
  /// Set when some p_k or p_0 lies on {0, 1}; affected components carry the
  /// sentinels 0 or +inf (or 1 when p_k equals a degenerate p_0).
  bool degenerate = false;
};

OddsRatioVector odds_ratio_vector(std::span<const double> p);

}  // namespace twostage
