#include "twostage/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "twostage/conditional.hpp"
#include "twostage/design_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"
#include "twostage/search.hpp"

namespace twostage {

// ---------------------------------------------------------------------------
// Oracle

namespace {

// Deliberately naive: n choose x by a running product, powers by std::pow.
double naive_binom(int x, int n, double p) {
  if (x < 0 || x > n) return 0.0;
  double c = 1.0;
  for (int i = 1; i <= x; ++i) c = c * (n - x + i) / i;
  const double a = x == 0 ? 1.0 : std::pow(p, x);
  const double b = n - x == 0 ? 1.0 : std::pow(1.0 - p, n - x);
  return c * a * b;
}

// Calls fn for every vector with 0 <= v[i] <= limits[i], last index fastest.
void nested(const std::vector<int>& limits, std::vector<int>& v, std::size_t i,
            const std::function<void(const std::vector<int>&)>& fn) {
  if (i == limits.size()) {
    fn(v);
    return;
  }
  for (int x = 0; x <= limits[i]; ++x) {
    v[i] = x;
    nested(limits, v, i + 1, fn);
  }
}

bool in_band(const Band& b, int t) { return b.lo <= t && t <= b.hi; }

}  // namespace

double brute_force_outcome_prob(const Design& d, std::span<const double> p, const OutcomePair& o) {
  const int K = design_K(d);
  const StageSizes s = design_sizes(d);
  if (s.stage_one_total(K) > kOracleStageOneLimit)
    throw validation_error("design exceeds the brute-force oracle scale");
  if (static_cast<int>(p.size()) != K + 1) throw validation_error("p needs K + 1 entries");
  if (!is_valid_outcome(o) || o.K != K) return 0.0;

  const bool second = o.max_omega() == 2;
  std::vector<int> lim1(K + 1, s.arm1), lim2(K + 1, 0);
  lim1[0] = s.control1;
  if (second) {
    lim2[0] = s.control2;
    for (int k = 1; k <= K; ++k) lim2[k] = o.omega(k) == 2 ? s.arm2 : 0;
  }
  StagePresence rho2;
  for (int k = 1; k <= K; ++k) rho2.rho.push_back(o.omega(k) == 2 ? 1 : 0);

  double total = 0.0;
  std::vector<int> x1(K + 1), x2(K + 1);
  nested(lim1, x1, 0, [&](const std::vector<int>& a) {
    double w1 = naive_binom(a[0], s.control1, p[0]);
    for (int k = 1; k <= K; ++k) w1 *= naive_binom(a[k], s.arm1, p[k]);
    if (w1 == 0.0) return;
    int z1 = 0;
    for (int v : a) z1 += v;
    nested(lim2, x2, 0, [&](const std::vector<int>& b) {
      double w2 = naive_binom(b[0], lim2[0], p[0]);
      for (int k = 1; k <= K; ++k) w2 *= naive_binom(b[k], lim2[k], p[k]);
      if (w2 == 0.0) return;
      int z2 = 0;
      for (int v : b) z2 += v;
      bool keep = true;
      for (int k = 1; k <= K && keep; ++k) {
        const int t1 = a[k] - a[0];
        const int t2 = a[k] + b[k] - a[0] - b[0];
        if (const auto* bd = std::get_if<BinomialDesign>(&d)) {
          keep = in_band(band_E(k, 1, o, *bd), t1) && in_band(band_E(k, 2, o, *bd), t2);
        } else {
          const auto& bf = std::get<FisherDesign>(d).boundaries;
          keep = in_band(band_F1(k, z1, o, bf), t1) && (!second || in_band(band_F2(k, z1, z2, rho2, o, bf), t2));
        }
      }
      if (keep) total += w1 * w2;
    });
  });
  return total;
}

namespace {

std::vector<AllocationRatios> oracle_ratios() {
  return {{2.0, 1.0, 2.0}, {3.0, 1.0, 2.0}, {2.0, 1.0, 3.0}, {1.5, 0.5, 1.0}, {2.0, 0.5, 1.5}, {1.0, 1.0, 2.0}};
}

std::vector<double> random_p(std::mt19937_64& rng, int K) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(K + 1);
  switch (kind(rng)) {
    case 0:  // global null
      std::fill(p.begin(), p.end(), std::round(u(rng) * 100) / 100);
      break;
    case 1:  // degenerate entries
      for (double& v : p) v = u(rng) < 0.5 ? 0.0 : 1.0;
      break;
    case 2:  // control tied to one arm
      for (double& v : p) v = u(rng);
      p[1] = p[0];
      break;
    case 3:
      std::fill(p.begin(), p.end(), u(rng) < 0.5 ? 0.0 : 1.0);
      break;
    default:
      for (double& v : p) v = u(rng);
  }
  return p;
}

std::vector<std::pair<int, AllocationRatios>> oracle_sizes(int K) {
  std::vector<std::pair<int, AllocationRatios>> out;
  for (const auto& r : oracle_ratios())
    for (int n = 1; n <= kOracleStageOneLimit; ++n) {
      if (!r.integral_for(n)) continue;
      if (StageSizes::from(n, r).stage_one_total(K) > kOracleStageOneLimit) continue;
      out.emplace_back(n, r);
    }
  return out;
}

}  // namespace

std::vector<OracleCase> oracle_cases(std::uint64_t seed, int per_method) {
  std::mt19937_64 rng(seed);
  std::vector<OracleCase> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  for (int i = 0; i < per_method; ++i) {
    const int K = 1 + i % 2;
    const auto sizes = oracle_sizes(K);
    const auto& [n, r] = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
    TrialConfig cfg = TrialConfig::example(K);
    cfg.ratios = r;
    const auto space = enumerate_design_space(cfg, n);
    const auto& d = space[std::uniform_int_distribution<std::size_t>(0, space.size() - 1)(rng)];
    std::ostringstream label;
    label << "binomial K=" << K << " n=" << n << " ratios=(" << r.rC2 << "," << r.rE1 << "," << r.rE2
          << ") f=(" << d.f1 << "," << d.f2 << ") e=(" << d.e1 << "," << d.e2 << ")";
    out.push_back({label.str(), d, random_p(rng, K)});
  }

  for (int i = 0; i < per_method; ++i) {
    const int K = 1 + i % 2;
    const auto sizes = oracle_sizes(K);
    const auto& [n, r] = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
    TrialConfig cfg = TrialConfig::example(K);
    cfg.ratios = r;
    FisherSpec spec = FisherSpec::from(cfg);
    const FisherContext ctx(spec, n);
    const StageSizes s = ctx.sizes();
    FisherDesign d;
    std::ostringstream label;
    label << "fisher K=" << K << " n=" << n << " ratios=(" << r.rC2 << "," << r.rE1 << "," << r.rE2 << ")";
    if (i % 3 == 0) {
      const double a1 = 0.01 + 0.13 * u(rng), b1 = 0.01 + 0.18 * u(rng);
      d = ctx.build(a1, b1);
      label << " derived alpha1=" << a1 << " beta1=" << b1;
    } else {
      // Arbitrary boundary maps exercise every band, including empty ones.
      d.spec = spec;
      d.n = n;
      d.alpha1 = 0.05;
      d.beta1 = 0.1;
      auto& b = d.boundaries;
      b.f1 = std::uniform_int_distribution<int>(-s.control1 - 1, s.arm1 - 1)(rng);
      const int z1_max = s.stage_one_total(K);
      for (int z1 = 0; z1 <= z1_max; ++z1)
        b.e1.push_back(std::uniform_int_distribution<int>(b.f1 + 2, s.arm1 + 2)(rng));
      b.e2.resize(K);
      for (int m = 1; m <= K; ++m) {
        b.e2[m - 1].resize(z1_max + 1);
        for (auto& row : b.e2[m - 1])
          for (int z2 = 0; z2 <= s.stage_two_total(m); ++z2)
            row.push_back(std::uniform_int_distribution<int>(-(s.control1 + s.control2) - 1,
                                                             s.arm1 + s.arm2 + 1)(rng));
      }
      label << " arbitrary f1=" << b.f1;
    }
    out.push_back({label.str(), d, random_p(rng, K)});
  }
  return out;
}

OracleComparison compare_with_oracle(const std::vector<OracleCase>& cases, unsigned threads) {
  std::vector<double> worst(cases.size(), 0.0);
  std::vector<std::size_t> outcomes(cases.size(), 0);
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    const auto& c = cases[i];
    const Evaluator ev(c.design);
    const auto dp = ev.distribution(c.p);
    const OutcomeSpace space = enumerate_outcomes(design_K(c.design));
    for (std::size_t j = 0; j < space.size(); ++j) {
      const double bf = brute_force_outcome_prob(c.design, c.p, space[j]);
      worst[i] = std::max(worst[i], std::fabs(bf - dp[j]));
    }
    outcomes[i] = space.size();
  });
  OracleComparison r;
  r.cases = cases.size();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    r.outcomes += outcomes[i];
    if (r.worst_case.empty() || worst[i] > r.max_abs_diff) {
      r.max_abs_diff = worst[i];
      r.worst_case = cases[i].label;
    }
  }
  return r;
}

Counterexample find_fwer_counterexample() {
  TrialConfig cfg = TrialConfig::example(1);
  const std::vector<double> zero{0.0, 0.0}, half{0.5, 0.5};
  for (int n = 1; n <= 10; ++n)
    for (const auto& d : enumerate_design_space(cfg, n)) {
      if (d.f1 > 0 || d.f2 > 0) continue;
      const double a = binomial_fwer(d, zero), b = binomial_fwer(d, half);
      if (a > b) return {d, a, b};
    }
  throw consistency_error("no counterexample design found");
}

// ---------------------------------------------------------------------------
// Property suite

bool SuiteReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

nlohmann::json SuiteReport::to_json() const {
  nlohmann::json fam = nlohmann::json::array();
  for (const auto& r : results)
    fam.push_back({{"family", r.family},
                   {"module", r.module},
                   {"passed", r.passed},
                   {"checks", r.checks},
                   {"detail", r.detail}});
  return {{"seed", seed},
          {"families", results.size()},
          {"all_passed", all_passed()},
          {"wall_seconds", wall_seconds},
          {"results", fam}};
}

namespace {

class Suite {
 public:
  Suite(std::uint64_t seed, unsigned threads) : rng_(seed), threads_(threads) { report_.seed = seed; }

  void run(const std::string& family, const std::string& module,
           const std::function<void(PropertyResult&)>& body) {
    PropertyResult r{family, module, true, 0, ""};
    try {
      body(r);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    report_.results.push_back(std::move(r));
  }

  std::mt19937_64& rng() { return rng_; }
  unsigned threads() const { return threads_; }
  SuiteReport take() { return std::move(report_); }

 private:
  std::mt19937_64 rng_;
  unsigned threads_;
  SuiteReport report_;
};

void expect(PropertyResult& r, bool ok, const std::string& what) {
  ++r.checks;
  if (!ok && r.passed) {
    r.passed = false;
    r.detail = what;
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

BinomialDesign random_binomial(std::mt19937_64& rng, int K, int n_max) {
  TrialConfig cfg = TrialConfig::example(K);
  const int n = std::uniform_int_distribution<int>(1, n_max)(rng);
  const auto space = enumerate_design_space(cfg, n);
  return space[std::uniform_int_distribution<std::size_t>(0, space.size() - 1)(rng)];
}

FisherDesign random_fisher(std::mt19937_64& rng, int K, int n_max) {
  TrialConfig cfg = TrialConfig::example(K);
  const int n = std::uniform_int_distribution<int>(1, n_max)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const FisherContext ctx(FisherSpec::from(cfg), n);
  return ctx.build(0.01 + 0.13 * u(rng), 0.01 + 0.18 * u(rng));
}

}  // namespace

SuiteReport run_property_suite(std::uint64_t seed, unsigned threads) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite suite(seed, threads);
  auto& rng = suite.rng();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  suite.run("binomial pmf sums to one", "exact-math", [&](PropertyResult& r) {
    for (int n = 0; n <= 60; ++n)
      for (double p : linear_grid(0.0, 1.0, 0.05)) {
        CompensatedSum s;
        for (int x = 0; x <= n; ++x) s += binom_pmf(x, n, p);
        expect(r, std::fabs(s.value() - 1.0) <= 1e-9, "n=" + std::to_string(n) + " p=" + fmt(p));
      }
  });

  suite.run("binomial pmf reflection symmetry", "exact-math", [&](PropertyResult& r) {
    for (int n = 0; n <= 60; n += 3)
      for (double p : linear_grid(0.0, 1.0, 0.05))
        for (int x = 0; x <= n; ++x)
          expect(r, std::fabs(binom_pmf(x, n, p) - binom_pmf(n - x, n, 1.0 - p)) <= 1e-12,
                 "n=" + std::to_string(n) + " x=" + std::to_string(x) + " p=" + fmt(p));
  });

  suite.run("odds ratio monotone and unit at ties", "exact-math", [&](PropertyResult& r) {
    for (int i = 0; i < 200; ++i) {
      const double p0 = 0.01 + 0.98 * unit(rng), a = 0.01 + 0.98 * unit(rng), b = 0.01 + 0.98 * unit(rng);
      const double lo = std::min(a, b), hi = std::max(a, b);
      const std::vector<double> pl{p0, lo}, ph{p0, hi}, pt{p0, p0};
      const auto tl = odds_ratio_vector(pl).theta[0], th = odds_ratio_vector(ph).theta[0];
      expect(r, lo == hi ? tl == th : tl < th, "monotonicity at p0=" + fmt(p0));
      expect(r, odds_ratio_vector(pt).theta[0] == 1.0, "tie at p0=" + fmt(p0));
    }
  });

  suite.run("outcome space size matches filtered raw pairs", "outcome-space", [&](PropertyResult& r) {
    for (int K = 1; K <= 3; ++K) {
      std::size_t valid = 0;
      for (std::uint32_t psi = 0; psi < (1u << K); ++psi)
        for (std::uint32_t om = 0; om < (1u << K); ++om) {
          // A stage-one rejection ends the study, so it cannot coexist with stage two.
          const bool stage_one_rejection = (psi & ~om) != 0;
          if (!(stage_one_rejection && om != 0)) ++valid;
        }
      expect(r, enumerate_outcomes(K).size() == valid, "K=" + std::to_string(K));
    }
  });

  suite.run("familywise-error outcomes within rejection outcomes", "outcome-space", [&](PropertyResult& r) {
    for (int K = 1; K <= 3; ++K) {
      const auto space = enumerate_outcomes(K);
      for (int i = 0; i < 30; ++i) {
        auto p = random_p(rng, K);
        for (const auto& o : space.outcomes()) expect(r, !in_xi_fwer(o, p) || in_xi_rej(o), o.to_string());
        std::fill(p.begin(), p.end(), p[0]);
        for (const auto& o : space.outcomes()) expect(r, in_xi_fwer(o, p) == in_xi_rej(o), o.to_string());
      }
    }
  });

  suite.run("conditional pmf free of p under theta = 1", "fisher-design", [&](PropertyResult& r) {
    for (int K = 1; K <= 2; ++K) {
      const StageSizes s = StageSizes::from(3, AllocationRatios{});
      std::vector<int> lim(K + 1, s.arm1);
      lim[0] = s.control1;
      const std::vector<double> ones(K, 1.0);
      for_each_lattice(lim, [&](std::span<const int> x) {
        int z = 0;
        for (int v : x) z += v;
        double ref = -1.0;
        for (double p : {0.3, 0.5, 0.7}) {
          // Joint probability over P(Z = z) at a common p.
          double joint = binom_pmf(x[0], s.control1, p);
          for (int k = 1; k <= K; ++k) joint *= binom_pmf(x[k], s.arm1, p);
          const double g = g_pmf(z, std::vector<double>(K + 1, p), StagePresence::all(K), s, 1);
          const double f = joint / g;
          if (ref < 0) ref = f;
          expect(r, std::fabs(f - ref) <= 1e-12, "p-dependence at p=" + fmt(p));
        }
        expect(r, std::fabs(conditional_pmf(x, z, StagePresence::all(K), ones, s, 1) - ref) <= 1e-12,
               "conditional_pmf differs from joint/g");
      });
    }
  });

  suite.run("conditional pmf normalization", "fisher-design", [&](PropertyResult& r) {
    const StageSizes s = StageSizes::from(3, AllocationRatios{});
    for (const std::vector<double>& theta : std::vector<std::vector<double>>{
             {1.0, 1.0}, {0.25, 4.0}, {1.0 / 64, 64.0}, {0.0, 1.0}, {kInf, 2.0}, {kInf, 0.0}}) {
      std::vector<int> lim{s.control1, s.arm1, s.arm1};
      std::vector<double> sum(s.stage_one_total(2) + 1, 0.0);
      for_each_lattice(lim, [&](std::span<const int> x) {
        const int z = x[0] + x[1] + x[2];
        sum[z] += conditional_pmf(x, z, StagePresence::all(2), theta, s, 1);
      });
      for (std::size_t z = 0; z < sum.size(); ++z) {
        // With a sentinel odds ratio some totals have no support left.
        if (sum[z] == 0.0) continue;
        expect(r, std::fabs(sum[z] - 1.0) <= 1e-9, "z=" + std::to_string(z));
      }
    }
  });

  suite.run("Fisher weak control is structural", "fisher-design", [&](PropertyResult& r) {
    for (int i = 0; i < 6; ++i) {
      const auto d = random_fisher(rng, 1 + i % 2, 10);
      const Evaluator ev(d);
      for (double p : linear_grid(0.0, 1.0, 0.01))
        expect(r, ev.fwer(ev.common(p)) <= d.spec.alpha + 1e-12,
               "n=" + std::to_string(d.n) + " p=" + fmt(p));
    }
  });

  suite.run("e1 nonincreasing in alpha1, f1 nondecreasing in beta1", "fisher-design", [&](PropertyResult& r) {
    for (int K = 1; K <= 2; ++K)
      for (int n : {5, 9}) {
        const FisherContext ctx(FisherSpec::from(TrialConfig::example(K)), n);
        std::vector<int> prev;
        for (double a : linear_grid(0.01, 0.14, 0.01)) {
          const auto e1 = ctx.e1_for(a);
          if (!prev.empty())
            for (std::size_t z = 0; z < e1.size(); ++z) expect(r, e1[z] <= prev[z], "alpha1=" + fmt(a));
          prev = e1;
        }
        int f_prev = INT_MIN;
        for (double b : linear_grid(0.01, 0.19, 0.01)) {
          const int f1 = ctx.f1_for(b);
          expect(r, f1 >= f_prev, "beta1=" + fmt(b));
          f_prev = f1;
        }
      }
  });

  suite.run("binomial DP equals literal nested sum", "binomial-design", [&](PropertyResult& r) {
    auto cases = oracle_cases(rng(), 60);
    cases.erase(std::remove_if(cases.begin(), cases.end(),
                               [](const OracleCase& c) { return !std::holds_alternative<BinomialDesign>(c.design); }),
                cases.end());
    const auto cmp = compare_with_oracle(cases, suite.threads());
    r.checks = static_cast<long>(cmp.outcomes);
    if (cmp.max_abs_diff > 1e-12) {
      r.passed = false;
      r.detail = "max diff " + fmt(cmp.max_abs_diff) + " at " + cmp.worst_case;
    }
  });

  suite.run("Fisher DP equals literal nested sum", "fisher-design", [&](PropertyResult& r) {
    auto cases = oracle_cases(rng(), 60);
    cases.erase(std::remove_if(cases.begin(), cases.end(),
                               [](const OracleCase& c) { return !std::holds_alternative<FisherDesign>(c.design); }),
                cases.end());
    const auto cmp = compare_with_oracle(cases, suite.threads());
    r.checks = static_cast<long>(cmp.outcomes);
    if (cmp.max_abs_diff > 1e-12) {
      r.passed = false;
      r.detail = "max diff " + fmt(cmp.max_abs_diff) + " at " + cmp.worst_case;
    }
  });

  suite.run("binomial probabilities invariant under arm permutation", "binomial-design", [&](PropertyResult& r) {
    for (int i = 0; i < 30; ++i) {
      const auto d = random_binomial(rng, 2, 8);
      const std::vector<double> p{unit(rng), unit(rng), unit(rng)};
      const std::vector<double> q{p[0], p[2], p[1]};
      const auto a = outcome_distribution_binomial(d, p), b = outcome_distribution_binomial(d, q);
      const auto space = enumerate_outcomes(2);
      for (std::size_t j = 0; j < space.size(); ++j) {
        OutcomePair o = space[j];
        auto swap_bits = [](std::uint32_t m) { return ((m & 1u) << 1) | ((m >> 1) & 1u); };
        const OutcomePair sw{2, swap_bits(o.rejected), swap_bits(o.second_stage)};
        expect(r, std::fabs(a[j] - b[space.index_of(sw)]) <= 1e-12, o.to_string());
      }
    }
  });

  suite.run("positive boundaries give zero FWER at p in {0, 1}", "binomial-design", [&](PropertyResult& r) {
    for (int i = 0; i < 100; ++i) {
      const int K = 1 + i % 2;
      auto d = random_binomial(rng, K, 10);
      if (d.e1 <= 0 || d.e2 <= 0) continue;
      for (double p : {0.0, 1.0})
        expect(r, binomial_fwer(d, std::vector<double>(K + 1, p)) <= 1e-15, "p=" + fmt(p));
    }
  });

  suite.run("FWER counterexample with non-positive acceptance boundaries", "binomial-design",
            [&](PropertyResult& r) {
              const auto c = find_fwer_counterexample();
              expect(r, c.fwer_at_zero > c.fwer_at_half, "no counterexample");
              r.detail = "n=" + std::to_string(c.design.n) + " f=(" + std::to_string(c.design.f1) + "," +
                         std::to_string(c.design.f2) + ") e=(" + std::to_string(c.design.e1) + "," +
                         std::to_string(c.design.e2) + ")";
            });

  suite.run("outcome distribution sums to one", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 40; ++i) {
      const int K = 1 + i % 2;
      const Design d = i % 4 < 2 ? Design(random_binomial(rng, K, 15)) : Design(random_fisher(rng, K, 8));
      const auto p = random_p(rng, K);
      const auto dist = Evaluator(d).distribution(p);
      CompensatedSum s;
      for (double v : dist) s += v;
      expect(r, std::fabs(s.value() - 1.0) <= 1e-9, "sum " + fmt(s.value()));
    }
  });

  suite.run("familywise power dominates per-arm rejection", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 40; ++i) {
      const int K = 1 + i % 2;
      const Design d = i % 4 < 2 ? Design(random_binomial(rng, K, 15)) : Design(random_fisher(rng, K, 8));
      std::vector<double> p(K + 1);
      p[0] = 0.8 * unit(rng);
      for (int k = 1; k <= K; ++k) p[k] = std::min(1.0, p[0] + 0.01 + 0.19 * unit(rng));
      const auto oc = oc_at(d, p);
      for (double a : oc.per_arm_reject) expect(r, oc.fwp >= a - 1e-12, "fwp " + fmt(oc.fwp));
    }
  });

  suite.run("ESS between stage-one and maximal sample sizes", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 100; ++i) {
      const int K = 1 + i % 2;
      const Design d = i % 4 != 3 ? Design(random_binomial(rng, K, 20)) : Design(random_fisher(rng, K, 6));
      const Evaluator ev(d);
      const StageSizes s = design_sizes(d);
      for (int j = 0; j < 20; ++j) {
        const auto p = random_p(rng, K);
        const double ess = ev.ess(p);
        expect(r, ess >= s.stage_one_total(K) - 1e-9 && ess <= s.max_total(K) + 1e-9, "ess " + fmt(ess));
      }
    }
  });

  suite.run("FWER equals FWP under the global null", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 30; ++i) {
      const int K = 1 + i % 2;
      const Design d = i % 2 ? Design(random_binomial(rng, K, 15)) : Design(random_fisher(rng, K, 8));
      const auto oc = oc_at(d, std::vector<double>(K + 1, unit(rng)));
      expect(r, std::fabs(oc.fwer - oc.fwp) <= 1e-12, "fwer " + fmt(oc.fwer) + " fwp " + fmt(oc.fwp));
    }
  });

  suite.run("full-space FWER search dominates the diagonal", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 3; ++i) {
      const Design d = random_binomial(rng, 1 + i % 2, 12);
      const Evaluator ev(d);
      FullSearchOptions opt;
      opt.budget = 1000;
      opt.seed = rng();
      const auto full = max_fwer_full(ev, opt);
      const auto diag = max_fwer_common_p(ev, 0.01);
      expect(r, full.max_fwer >= diag.max_fwer - 1e-9, "full " + fmt(full.max_fwer));
      expect(r, std::fabs(ev.fwer(full.argmax_p) - full.max_fwer) <= 1e-15, "argmax value mismatch");
      for (const auto& [p, v] : full.search_trace) expect(r, v <= full.max_fwer + 1e-15, "trace exceeds max");
    }
  });

  suite.run("simulation agrees with exact evaluation", "oc-eval", [&](PropertyResult& r) {
    for (int i = 0; i < 4; ++i) {
      const int K = 1 + i % 2;
      const Design d = i < 2 ? Design(random_binomial(rng, K, 10)) : Design(random_fisher(rng, K, 8));
      // Interior p keeps every rate away from the zero-variance corner.
      std::vector<double> p(K + 1);
      for (double& v : p) v = 0.05 + 0.9 * unit(rng);
      const auto oc = oc_at(d, p);
      const long reps = 20000;
      const auto sim = simulate(d, p, reps, rng(), suite.threads());
      auto rate_ok = [&](double a, double b, double se) {
        const double se_exact = std::sqrt(b * (1.0 - b) / reps);
        return std::fabs(a - b) <= 4.5 * std::max(se, se_exact) + 1e-12;
      };
      expect(r, rate_ok(sim.fwer, oc.fwer, sim.fwer_se), "fwer at " + fmt(p[0]));
      expect(r, rate_ok(sim.fwp, oc.fwp, sim.fwp_se), "fwp at " + fmt(p[0]));
      // Exact standard error of N, so a run that never reaches a rare stage two is judged fairly.
      const auto dist = Evaluator(d).distribution(p);
      const OutcomeSpace space = enumerate_outcomes(K);
      double var = 0.0;
      for (std::size_t j = 0; j < space.size(); ++j) {
        const double dev = sample_size(design_sizes(d), space[j]) - oc.ess;
        var += dist[j] * dev * dev;
      }
      const double ess_se = std::max(sim.ess_se, std::sqrt(var / reps));
      expect(r, std::fabs(sim.ess - oc.ess) <= 4.5 * ess_se + 1e-9,
             std::string(design_method(d)) + " n=" + std::to_string(design_n(d)) + " ess " + fmt(oc.ess) + " vs " +
                 fmt(sim.ess) + " se " + fmt(ess_se));
    }
  });

  suite.run("simulation independent of worker count", "oc-eval", [&](PropertyResult& r) {
    const Design d = random_binomial(rng, 2, 10);
    const std::vector<double> p{0.3, 0.4, 0.5};
    const std::uint64_t s = rng();
    const auto a = simulate(d, p, 20000, s, 1), b = simulate(d, p, 20000, s, 3);
    expect(r, a.fwer == b.fwer && a.fwp == b.fwp && a.ess == b.ess, "results differ");
  });

  suite.run("design JSON round trip", "cli", [&](PropertyResult& r) {
    for (int i = 0; i < 6; ++i) {
      const int K = 1 + i % 2;
      const Design d = i < 3 ? Design(random_binomial(rng, K, 15)) : Design(random_fisher(rng, K, 8));
      const Design back = design_from_json(nlohmann::json::parse(design_to_json(d).dump()), true);
      const auto p = random_p(rng, K);
      const auto a = oc_at(d, p), b = oc_at(back, p);
      expect(r, std::fabs(a.ess - b.ess) <= 1e-9 && std::fabs(a.fwer - b.fwer) <= 1e-9 &&
                    std::fabs(a.fwp - b.fwp) <= 1e-9,
             "round trip changed the operating characteristics");
    }
  });

  suite.run("boundary perturbation is detected", "simulator-harness", [&](PropertyResult& r) {
    int leaks = 0;
    for (int i = 0; i < 10; ++i) {
      auto d = random_binomial(rng, 1 + i % 2, 10);
      d.e2 = d.f2 + 2;
      bool caught = false;
      try {
        d.validate();
      } catch (const validation_error&) {
        caught = true;
      }
      expect(r, caught, "validate accepted e2 != f2 + 1");
      // The unvalidated design drops the mass at T_k2 = f2 + 1.
      const auto dist = outcome_distribution_binomial(d, std::vector<double>(d.K + 1, 0.5));
      CompensatedSum s;
      for (double v : dist) s += v;
      if (s.value() < 1.0 - 1e-9) ++leaks;
    }
    expect(r, leaks > 0, "no perturbed design lost probability mass");
    r.detail = std::to_string(leaks) + " of 10 perturbed designs lose mass";
  });

  suite.run("Fisher boundaries regenerate deterministically", "fisher-design", [&](PropertyResult& r) {
    for (int i = 0; i < 5; ++i) {
      const auto d = random_fisher(rng, 1 + i % 2, 10);
      const FisherContext ctx(d.spec, d.n);
      expect(r, ctx.build(d.alpha1, d.beta1).boundaries == d.boundaries, "n=" + std::to_string(d.n));
      expect(r, d.boundaries == FisherContext(d.spec, d.n).build(d.alpha1, d.beta1).boundaries, "fresh context");
    }
  });

  SuiteReport rep = suite.take();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace twostage
