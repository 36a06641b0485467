#include "twostage/exact_math.hpp"

#include <algorithm>

namespace twostage {

double log_binom_coeff(int n, int x) {
  if (n < 0 || x < 0 || x > n) return -kInf;
  if (x == 0 || x == n) return 0.0;
  return std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0);
}

double binom_pmf(int x, int n, double p) {
  if (n < 0 || x < 0 || x > n) return 0.0;
  if (p <= 0.0) return x == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return x == n ? 1.0 : 0.0;
  // log1p keeps symmetry b(x|n,p) = b(n-x|n,1-p) to rounding.
  const double lp = x * std::log(p) + (n - x) * std::log1p(-p);
  return std::exp(log_binom_coeff(n, x) + lp);
}

std::vector<double> binom_pmf_vector(int n, double p) {
  std::vector<double> out(static_cast<std::size_t>(std::max(n, 0)) + 1, 0.0);
  for (int x = 0; x <= n; ++x) out[x] = binom_pmf(x, n, p);
  return out;
}

std::vector<double> cumulative(std::span<const double> pmf) {
  std::vector<double> out(pmf.size());
  CompensatedSum s;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    s += pmf[i];
    out[i] = s.value();
  }
  return out;
}

std::vector<double> odds_weights(int n, double theta) {
  std::vector<double> w(static_cast<std::size_t>(n) + 1, 0.0);
  if (theta <= 0.0) {
    w[0] = 1.0;
    return w;
  }
  if (std::isinf(theta)) {
    w[n] = 1.0;
    return w;
  }
  const double lt = std::log(theta);
  std::vector<double> lw(w.size());
  double mx = -kInf;
  for (int x = 0; x <= n; ++x) {
    lw[x] = log_binom_coeff(n, x) + x * lt;
    mx = std::max(mx, lw[x]);
  }
  for (int x = 0; x <= n; ++x) w[x] = std::exp(lw[x] - mx);
  return w;
}

OddsRatioVector odds_ratio_vector(std::span<const double> p) {
  OddsRatioVector out;
  if (p.empty()) return out;
  const double p0 = p[0];
  out.theta.reserve(p.size() - 1);
  for (std::size_t k = 1; k < p.size(); ++k) {
    const double pk = p[k];
    double th;
    if (p0 <= 0.0 || p0 >= 1.0 || pk <= 0.0 || pk >= 1.0) {
      out.degenerate = true;
      if (pk == p0)
        th = 1.0;
      else if (pk <= 0.0 || p0 >= 1.0)
        th = 0.0;
      else
        th = kInf;
    } else {
      th = pk * (1.0 - p0) / (p0 * (1.0 - pk));
    }
    out.theta.push_back(th);
  }
  return out;
}

}  // namespace twostage
