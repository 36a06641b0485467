#include "twostage/binomial_design.hpp"

#include <algorithm>
#include <map>

#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"

namespace twostage {

namespace {

// P(lo <= X <= hi) from a cumulative table of X on 0..size.
double range_prob(const std::vector<double>& cdf, int lo, int hi) {
  const int size = static_cast<int>(cdf.size()) - 1;
  lo = std::max(lo, 0);
  hi = std::min(hi, size);
  if (lo > hi) return 0.0;
  return cdf[hi] - (lo > 0 ? cdf[lo - 1] : 0.0);
}

// Saturating add so that unbounded band ends stay unbounded.
int shift(int bound, int by) {
  if (bound == Band::kNegInfBound || bound == Band::kPosInfBound) return bound;
  return bound + by;
}

}  // namespace

std::vector<int> test_statistics(const TrialData& x, int stage) {
  if (stage != 1 && stage != 2) throw validation_error("stage must be 1 or 2");
  if (x.stage1.size() < 2) throw validation_error("need control and at least one arm");
  if (stage == 2 && x.stage2.size() != x.stage1.size())
    throw validation_error("stage-two data shape mismatch");
  const std::size_t K = x.stage1.size() - 1;
  std::vector<int> t(K);
  for (std::size_t k = 1; k <= K; ++k) {
    t[k - 1] = x.stage1[k] - x.stage1[0];
    if (stage == 2) t[k - 1] += x.stage2[k] - x.stage2[0];
  }
  return t;
}

void BinomialDesign::validate() const {
  if (K < 1 || K > kMaxArms) throw validation_error("K must lie in 1..4");
  if (n < 1) throw validation_error("n must be positive");
  if (!ratios.integral_for(n)) throw validation_error("ratios not integral for n");
  const auto s = sizes();
  if (e2 != f2 + 1) throw validation_error("design requires e2 = f2 + 1");
  if (!(f1 < e1 - 1)) throw validation_error("design requires f1 < e1 - 1");
  if (f1 < -s.control1 || f1 > s.arm1 - 2) throw validation_error("f1 out of range");
  if (e1 < -s.control1 + 2 || e1 > s.arm1) throw validation_error("e1 out of range");
  if (f2 < f1 + 1 - s.control2 || f2 > e1 - 1 + s.arm2) throw validation_error("f2 out of range");
}

Band band_E(int k, int j, const OutcomePair& o, const BinomialDesign& d) {
  const int wk = o.omega(k);
  if (j < wk) return Band::open(d.f1, d.e1);
  if (j > wk) return Band::all();
  if (o.psi(k) == 1) return Band::at_least(d.e(j));
  if (j == o.max_omega() && o.any_rejected()) return Band::at_most(d.e(j) - 1);
  return Band::at_most(d.f(j));
}

double outcome_prob_binomial(const BinomialDesign& d, std::span<const double> p,
                             const OutcomePair& o) {
  if (p.size() != static_cast<std::size_t>(d.K) + 1)
    throw validation_error("p must have K + 1 entries");
  if (!is_valid_outcome(o)) return 0.0;
  const auto s = d.sizes();
  const auto c1 = binom_pmf_vector(s.control1, p[0]);
  const auto c2 = binom_pmf_vector(s.control2, p[0]);
  std::vector<std::vector<double>> pmf1(d.K), cdf1(d.K), cdf2(d.K);
  std::vector<Band> b1(d.K), b2(d.K);
  for (int k = 0; k < d.K; ++k) {
    pmf1[k] = binom_pmf_vector(s.arm1, p[k + 1]);
    cdf1[k] = cumulative(pmf1[k]);
    cdf2[k] = cumulative(binom_pmf_vector(s.arm2, p[k + 1]));
    b1[k] = band_E(k + 1, 1, o, d);
    b2[k] = band_E(k + 1, 2, o, d);
  }
  CompensatedSum total;
  for (int x01 = 0; x01 <= s.control1; ++x01) {
    for (int x02 = 0; x02 <= s.control2; ++x02) {
      const double w = c1[x01] * c2[x02];
      if (w == 0.0) continue;
      double prod = 1.0;
      for (int k = 0; k < d.K && prod != 0.0; ++k) {
        const int lo = shift(b1[k].lo, x01), hi = shift(b1[k].hi, x01);
        if (b2[k].unbounded()) {
          prod *= range_prob(cdf1[k], lo, hi);
          continue;
        }
        double arm = 0.0;
        for (int x = std::max(lo, 0); x <= std::min(hi, s.arm1); ++x) {
          const int off = x01 + x02 - x;
          arm += pmf1[k][x] * range_prob(cdf2[k], shift(b2[k].lo, off), shift(b2[k].hi, off));
        }
        prod *= arm;
      }
      total += w * prod;
    }
  }
  return total.value();
}

std::vector<double> outcome_distribution_binomial(const BinomialDesign& d,
                                                  std::span<const double> p) {
  const auto space = enumerate_outcomes(d.K);
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& o : space.outcomes()) out.push_back(outcome_prob_binomial(d, p, o));
  return out;
}

std::vector<BinomialDesign> enumerate_design_space(const TrialConfig& cfg, int n) {
  std::vector<BinomialDesign> out;
  if (n < 1 || !cfg.ratios.integral_for(n)) return out;
  const auto s = StageSizes::from(n, cfg.ratios);
  for (int f1 = -s.control1; f1 <= s.arm1 - 2; ++f1)
    for (int e1 = std::max(-s.control1 + 2, f1 + 2); e1 <= s.arm1; ++e1)
      for (int f2 = f1 + 1 - s.control2; f2 <= e1 - 1 + s.arm2; ++f2)
        out.push_back({cfg.K, n, f1, e1, f2, f2 + 1, cfg.ratios});
  return out;
}

OutcomePair conduct_binomial(const BinomialDesign& d, const TrialData& data) {
  if (data.stage1.size() != static_cast<std::size_t>(d.K) + 1)
    throw validation_error("stage-one data must have K + 1 entries");
  const auto s = d.sizes();
  if (data.stage1[0] < 0 || data.stage1[0] > s.control1)
    throw validation_error("control count outside its allocation");
  for (int k = 1; k <= d.K; ++k)
    if (data.stage1[k] < 0 || data.stage1[k] > s.arm1)
      throw validation_error("arm count outside its allocation");
  OutcomePair o;
  o.K = d.K;
  const auto t1 = test_statistics(data, 1);
  std::uint32_t decided = 0;
  for (int k = 0; k < d.K; ++k) {
    if (t1[k] >= d.e1) {
      o.rejected |= 1u << k;
      decided |= 1u << k;
    } else if (t1[k] <= d.f1) {
      decided |= 1u << k;
    }
  }
  const std::uint32_t all = (1u << d.K) - 1u;
  if (o.rejected || decided == all) return o;
  if (data.stage2.size() != data.stage1.size())
    throw validation_error("stage-two data required when the study continues");
  const auto t2 = test_statistics(data, 2);
  for (int k = 0; k < d.K; ++k) {
    if (decided & (1u << k)) continue;
    o.second_stage |= 1u << k;
    if (t2[k] >= d.e2) o.rejected |= 1u << k;
  }
  return o;
}

BinomialKernel::BinomialKernel(int K, const StageSizes& sizes, int f1, int e1,
                               std::span<const double> p)
    : K_(K), sizes_(sizes), f1_(f1), e1_(e1) {
  if (p.size() != static_cast<std::size_t>(K) + 1)
    throw validation_error("p must have K + 1 entries");
  control1_ = binom_pmf_vector(sizes.control1, p[0]);
  control2_ = binom_pmf_vector(sizes.control2, p[0]);
  y_lo_ = f1 + 1;
  y_hi_ = e1 + sizes.arm2;

  std::map<double, std::size_t> by_p;
  std::vector<std::size_t> which(K);
  for (int k = 0; k < K; ++k) {
    auto [it, inserted] = by_p.emplace(p[k + 1], by_p.size());
    which[k] = it->second;
  }
  distinct_.resize(by_p.size());
  for (const auto& [pk, idx] : by_p) {
    ArmTables& a = distinct_[idx];
    const auto pmf1 = binom_pmf_vector(sizes.arm1, pk);
    const auto cdf1 = cumulative(pmf1);
    const auto pmf2 = binom_pmf_vector(sizes.arm2, pk);
    // surv2[i] = P(x_k2 >= i) for i = 0..arm2+1
    std::vector<double> surv2(sizes.arm2 + 2, 0.0);
    for (int i = sizes.arm2; i >= 0; --i) surv2[i] = surv2[i + 1] + pmf2[i];
    for (auto& v : surv2) v = std::min(v, 1.0);
    auto s2 = [&](int y) { return y <= 0 ? 1.0 : y > sizes.arm2 ? 0.0 : surv2[y]; };

    const int nc = sizes.control1;
    a.reject1.resize(nc + 1);
    a.accept1.resize(nc + 1);
    a.continue1.resize(nc + 1);
    a.reject2.assign(nc + 1, std::vector<double>(y_hi_ - y_lo_ + 1, 0.0));
    for (int x01 = 0; x01 <= nc; ++x01) {
      a.reject1[x01] = range_prob(cdf1, x01 + e1, sizes.arm1);
      a.accept1[x01] = range_prob(cdf1, 0, x01 + f1);
      a.continue1[x01] = range_prob(cdf1, x01 + f1 + 1, x01 + e1 - 1);
      const int t_lo = std::max(f1 + 1, -x01), t_hi = std::min(e1 - 1, sizes.arm1 - x01);
      for (int y = y_lo_; y <= y_hi_; ++y) {
        double v = 0.0;
        for (int t = t_lo; t <= t_hi; ++t) v += pmf1[x01 + t] * s2(y - t);
        a.reject2[x01][y - y_lo_] = v;
      }
    }
  }
  for (int k = 0; k < K; ++k) arm_.push_back(&distinct_[which[k]]);
}

double BinomialKernel::reject2(const ArmTables& a, int x01, int y) const {
  if (y < y_lo_) return a.continue1[x01];
  if (y > y_hi_) return 0.0;
  return a.reject2[x01][y - y_lo_];
}

double BinomialKernel::no_rejection(std::uint32_t capped, int e2) const {
  CompensatedSum total;
  for (int x01 = 0; x01 <= sizes_.control1; ++x01) {
    const double w1 = control1_[x01];
    if (w1 == 0.0) continue;
    double keep_capped = 1.0, keep_free = 1.0;
    for (int k = 0; k < K_; ++k) {
      const double keep = 1.0 - arm_[k]->reject1[x01];
      if (capped & (1u << k))
        keep_capped *= keep;
      else
        keep_free *= keep;
    }
    // A free arm rejecting at stage one ends the study with the capped arms
    // unrejected.
    double v = keep_capped * (1.0 - keep_free);
    double stage2 = 0.0;
    for (int x02 = 0; x02 <= sizes_.control2; ++x02) {
      const double w2 = control2_[x02];
      if (w2 == 0.0) continue;
      double prod = 1.0;
      for (int k = 0; k < K_; ++k) {
        if (!(capped & (1u << k))) continue;
        const auto& a = *arm_[k];
        prod *= 1.0 - a.reject1[x01] - reject2(a, x01, e2 + x02);
      }
      stage2 += w2 * prod;
    }
    v += keep_free * stage2;
    total += w1 * v;
  }
  return total.value();
}

double BinomialKernel::stage_one_rejection(std::uint32_t capped) const {
  CompensatedSum total;
  for (int x01 = 0; x01 <= sizes_.control1; ++x01) {
    double keep = 1.0;
    for (int k = 0; k < K_; ++k)
      if (capped & (1u << k)) keep *= 1.0 - arm_[k]->reject1[x01];
    total += control1_[x01] * (1.0 - keep);
  }
  return total.value();
}

double BinomialKernel::ess() const {
  CompensatedSum p_stage2, expected_arms;
  for (int x01 = 0; x01 <= sizes_.control1; ++x01) {
    const double w = control1_[x01];
    if (w == 0.0) continue;
    double no_reject = 1.0, all_accept = 1.0;
    for (int k = 0; k < K_; ++k) {
      no_reject *= 1.0 - arm_[k]->reject1[x01];
      all_accept *= arm_[k]->accept1[x01];
    }
    p_stage2 += w * (no_reject - all_accept);
    for (int k = 0; k < K_; ++k) {
      double others = 1.0;
      for (int l = 0; l < K_; ++l)
        if (l != k) others *= 1.0 - arm_[l]->reject1[x01];
      expected_arms += w * arm_[k]->continue1[x01] * others;
    }
  }
  return sizes_.stage_one_total(K_) + p_stage2.value() * sizes_.control2 +
         expected_arms.value() * sizes_.arm2;
}

double binomial_no_rejection(const BinomialDesign& d, std::span<const double> p,
                             std::uint32_t capped) {
  BinomialKernel kernel(d.K, d.sizes(), d.f1, d.e1, p);
  return kernel.no_rejection(capped, d.e2);
}

double binomial_fwer(const BinomialDesign& d, std::span<const double> p) {
  const auto nulls = true_null_mask(p);
  if (!nulls) return 0.0;
  return 1.0 - binomial_no_rejection(d, p, nulls);
}

double binomial_fwp(const BinomialDesign& d, std::span<const double> p) {
  return 1.0 - binomial_no_rejection(d, p, (1u << d.K) - 1u);
}

double binomial_ess(const BinomialDesign& d, std::span<const double> p) {
  return BinomialKernel(d.K, d.sizes(), d.f1, d.e1, p).ess();
}

}  // namespace twostage
