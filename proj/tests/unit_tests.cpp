#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "twostage/design_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"
#include "twostage/harness.hpp"
#include "twostage/optimizer.hpp"

using namespace twostage;
using doctest::Approx;

namespace {

// Factorials by hand; independent of the log-gamma path in the library.
double factorial_pmf(int x, int n, double p) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  for (int i = 2; i <= x; ++i) f /= i;
  for (int i = 2; i <= n - x; ++i) f /= i;
  return f * std::pow(p, x) * std::pow(1 - p, n - x);
}

BinomialDesign two_arm_binomial() { return {2, 37, 2, 11, 7, 8, AllocationRatios{}}; }

const FisherDesign& two_arm_fisher() {
  static const FisherDesign d = FisherContext(FisherSpec::from(TrialConfig::example(2)), 38).build(0.07, 0.17);
  return d;
}

double sum(const std::vector<double>& v) {
  CompensatedSum s;
  for (double x : v) s += x;
  return s.value();
}

}  // namespace

TEST_CASE("log binomial coefficients") {
  CHECK(log_binom_coeff(0, 0) == 0.0);
  CHECK(log_binom_coeff(5, 2) == Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(std::isinf(log_binom_coeff(3, 4)));
  CHECK(log_binom_coeff(3, 4) < 0);
}

TEST_CASE("binomial pmf") {
  CHECK(binom_pmf(1, 2, 0.5) == Approx(0.5).epsilon(1e-15));
  CHECK(binom_pmf(2, 5, 0.3) == Approx(0.3087).epsilon(1e-13));
  CHECK(binom_pmf(0, 0, 0.7) == 1.0);
  CHECK(binom_pmf(0, 4, 0.0) == 1.0);
  CHECK(binom_pmf(4, 4, 1.0) == 1.0);
  CHECK(binom_pmf(5, 4, 0.3) == 0.0);
  for (int n : {1, 7, 30, 120})
    for (double p : {0.01, 0.3, 0.5, 0.77})
      for (int x = 0; x <= n; x += std::max(1, n / 10))
        CHECK(binom_pmf(x, n, p) == Approx(factorial_pmf(x, n, p)).epsilon(1e-10));
}

TEST_CASE("odds ratios") {
  const std::vector<double> a{0.5, 0.5}, b{0.7, 0.85}, c{0.7, 0.7, 0.85};
  CHECK(odds_ratio_vector(a).theta[0] == 1.0);
  const double expected = 0.85 * 0.3 / (0.7 * 0.15);
  CHECK(odds_ratio_vector(b).theta[0] == Approx(expected).epsilon(1e-14));
  const auto t = odds_ratio_vector(c).theta;
  CHECK(t[0] == 1.0);
  CHECK(t[1] == Approx(expected).epsilon(1e-14));
  const std::vector<double> d{0.0, 0.3};
  CHECK(odds_ratio_vector(d).degenerate);
}

TEST_CASE("outcome space") {
  CHECK(enumerate_outcomes(1).size() == 4);
  CHECK(enumerate_outcomes(2).size() == 12);
  const std::vector<int> psi{1, 0}, omega{1, 2};
  CHECK_FALSE(is_valid_outcome(OutcomePair::from_vectors(psi, omega)));

  auto pair = [](std::vector<int> ps, std::vector<int> om) { return OutcomePair::from_vectors(ps, om); };
  CHECK(in_xi_ind(pair({1, 0}, {1, 1}), 1));
  CHECK_FALSE(in_xi_ind(pair({0, 1}, {1, 1}), 1));
  CHECK(in_xi_ind(pair({1, 1}, {1, 1}), 2));
  CHECK_FALSE(in_xi_rej(pair({0, 0}, {1, 1})));
  CHECK(in_xi_rej(pair({0, 1}, {1, 1})));
  CHECK(in_xi_rej(pair({1, 1}, {1, 1})));
  const std::vector<double> p1{0.7, 0.7, 0.85}, p2{0.7, 0.85, 0.85};
  CHECK(in_xi_fwer(pair({1, 0}, {1, 1}), p1));
  CHECK_FALSE(in_xi_fwer(pair({0, 1}, {1, 1}), p1));
  CHECK_FALSE(in_xi_fwer(pair({1, 1}, {1, 1}), p2));

  const auto space = enumerate_outcomes(2);
  for (std::size_t i = 0; i < space.size(); ++i) CHECK(space.index_of(space[i]) == i);
}

TEST_CASE("test statistics") {
  CHECK(test_statistics({{3, 5}, {}}, 1) == std::vector<int>{2});
  CHECK(test_statistics({{3, 5}, {4, 2}}, 2) == std::vector<int>{0});
  CHECK(test_statistics({{0, 0, 0}, {}}, 1) == std::vector<int>{0, 0});
}

TEST_CASE("binomial bands") {
  const auto d = two_arm_binomial();
  auto pair = [](std::vector<int> ps, std::vector<int> om) { return OutcomePair::from_vectors(ps, om); };
  CHECK(band_E(1, 2, pair({1, 0}, {1, 1}), d).unbounded());
  CHECK(band_E(1, 1, pair({0, 0}, {2, 2}), d) == Band::open(d.f1, d.e1));
  CHECK(band_E(1, 1, pair({1, 0}, {1, 1}), d) == Band::at_least(d.e1));
  CHECK(band_E(2, 1, pair({1, 0}, {1, 1}), d) == Band::at_most(d.e1 - 1));
  CHECK(band_E(2, 1, pair({0, 0}, {1, 1}), d) == Band::at_most(d.f1));
}

TEST_CASE("binomial design space") {
  TrialConfig cfg = TrialConfig::example(1);
  // n = 2: f1 in [-2, 0], e1 in [max(0, f1 + 2), 2], f2 has e1 - f1 + 3 values.
  CHECK(enumerate_design_space(cfg, 2).size() == 34);
  for (const auto& d : enumerate_design_space(cfg, 4)) {
    CHECK(d.e2 == d.f2 + 1);
    CHECK(d.f1 < d.e1 - 1);
  }
  cfg.ratios = {2.0, 0.5, 1.5};
  CHECK(enumerate_design_space(cfg, 3).empty());
  CHECK_FALSE(enumerate_design_space(cfg, 4).empty());
}

TEST_CASE("binomial outcome probabilities") {
  const auto d = two_arm_binomial();
  for (double p : {0.0, 0.3, 0.7, 1.0}) CHECK(sum(outcome_distribution_binomial(d, std::vector<double>(3, p))) == Approx(1.0).epsilon(1e-12));
  const std::vector<double> p{0.7, 0.7, 0.7}, q{0.7, 0.85, 0.85};
  CHECK(binomial_ess(d, p) == Approx(144.2).epsilon(0.05 / 144.2));
  CHECK(binomial_ess(d, q) == Approx(190.3).epsilon(0.06 / 190.3));
  CHECK(oc_at(Design(d), p).ess == Approx(binomial_ess(d, p)).epsilon(1e-12));
}

TEST_CASE("conditional stage pmf") {
  const StageSizes s = StageSizes::from(1, AllocationRatios{});
  const auto rho = StagePresence::all(1);
  const std::vector<double> one{1.0}, three{3.0};
  const std::vector<int> a{1, 0}, b{0, 1};
  CHECK(conditional_pmf(a, 1, rho, one, s, 1) == Approx(0.5));
  CHECK(conditional_pmf(b, 1, rho, one, s, 1) == Approx(0.5));
  CHECK(conditional_pmf(b, 1, rho, three, s, 1) == Approx(0.75));
  CHECK(conditional_pmf(b, 0, rho, three, s, 1) == 0.0);

  const std::vector<double> half{0.5, 0.5};
  CHECK(g_pmf(0, half, rho, s, 1) == Approx(0.25));
  const StageSizes big = StageSizes::from(4, AllocationRatios{});
  const std::vector<double> p{0.3, 0.8, 0.6};
  const auto rho0 = StagePresence::from_mask(2, 0);
  for (int z = 0; z <= big.control1; ++z) CHECK(g_pmf(z, p, rho0, big, 1) == Approx(binom_pmf(z, big.control1, 0.3)));
  CHECK(sum(g_pmf_vector(p, StagePresence::all(2), big, 1)) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stage-one error and futility functions") {
  const FisherSpec spec = FisherSpec::from(TrialConfig::example(1));
  const int n = 6;
  const std::vector<double> one{1.0};
  CHECK(alpha_I1(spec, n, 4, 4 + n + 1, one) == 0.0);
  CHECK(alpha_I1(spec, n, 4, -n, one) == Approx(1.0));
  CHECK(beta_II1(spec, n, 4, -n - 1, one) == 0.0);
  CHECK(beta_II1(spec, n, 4, n, one) == Approx(1.0));
  CHECK(determine_f1(spec, n, 1e-9) == -n - 1);

  const double a1 = 0.05;
  const auto e1 = determine_e1(spec, n, a1);
  for (int z = 0; z < static_cast<int>(e1.size()); ++z) {
    CHECK(alpha_I1(spec, n, z, e1[z], one) <= a1 + 1e-12);
    if (e1[z] > -n) CHECK(alpha_I1(spec, n, z, e1[z] - 1, one) > a1);
  }
  const auto loose = determine_e1(spec, n, 1.0);
  for (int v : loose) CHECK(v == -n);
}

TEST_CASE("Fisher bands") {
  FisherBoundaries b;
  b.f1 = 1;
  b.e1 = std::vector<int>(13, 5);
  auto pair = [](std::vector<int> ps, std::vector<int> om) { return OutcomePair::from_vectors(ps, om); };
  const StagePresence rho{{0, 1}};
  CHECK(band_F2(1, 3, 4, rho, pair({0, 1}, {1, 2}), b).unbounded());
  CHECK(band_F1(1, 3, pair({1, 0}, {1, 1}), b) == Band::at_least(5));
  CHECK(band_F1(1, 3, pair({0, 1}, {1, 2}), b) == Band::at_most(1));
}

TEST_CASE("Fisher design of the two-arm example") {
  const auto& d = two_arm_fisher();
  CHECK(d.max_sample_size() == 228);
  const Evaluator ev(d);
  CHECK(ev.ess(ev.common(0.7)) == Approx(154.2).epsilon(0.05 / 154.2));
  const std::vector<double> alt{0.7, 0.85, 0.85};
  CHECK(ev.ess(alt, FisherEss::null_conditional) == Approx(151.7).epsilon(0.05 / 151.7));
  for (double p : linear_grid(0.0, 1.0, 0.01)) CHECK(ev.fwer(ev.common(p)) <= 0.15 + 1e-12);
  const std::vector<double> p{0.6, 0.7, 0.9};
  CHECK(sum(ev.distribution(p)) == Approx(1.0).epsilon(1e-12));
  CHECK(fisher_ess(d, ev.common(0.7), FisherEss::null_conditional) == Approx(ev.ess(ev.common(0.7))).epsilon(1e-12));
}

TEST_CASE("single-arm Fisher design ESS under the conditional convention") {
  const FisherContext ctx(FisherSpec::from(TrialConfig::example(1)), 46);
  const FisherDesign d = ctx.build(0.04, 0.10);
  const std::vector<double> p{0.7, 0.85}, q{0.7, 0.7};
  CHECK(fisher_ess(d, p, FisherEss::null_conditional) == Approx(131.27).epsilon(0.005 / 131.27));
  CHECK(fisher_ess(d, q) == Approx(131.54).epsilon(0.005 / 131.54));
  CHECK(d.max_sample_size() == 184);
}

TEST_CASE("minimal n for a fixed stage-one error split") {
  const FisherDesign d = find_min_n(TrialConfig::example(1), 0.11, 0.16);
  CHECK(d.n == 52);
  TrialConfig loose = TrialConfig::example(1);
  loose.beta = 1 - 1e-9;
  // With one subject per group no rejection is reachable, so n = 2 is the first with any power.
  const FisherDesign tiny = FisherContext(FisherSpec::from(loose), 1).build(0.05, 0.1);
  CHECK(fisher_min_fwp(tiny).fwp < 1e-12);
  CHECK(find_min_n(loose, 0.05, 0.1).n == 2);
}

TEST_CASE("decision rules") {
  const auto d = two_arm_binomial();
  CHECK(conduct_binomial(d, {{20, 21, 22}, {}}) == OutcomePair{2, 0, 0});
  CHECK(conduct_binomial(d, {{20, 31, 22}, {}}) == OutcomePair{2, 1, 0});
  const auto o = conduct_binomial(d, {{20, 25, 22}, {20, 30, 0}});
  CHECK(o.omega(1) == 2);
  CHECK(o.omega(2) == 1);
  CHECK(o.psi(1) == 1);
}

TEST_CASE("operating characteristics") {
  const auto d = two_arm_binomial();
  const Evaluator ev(d);
  const auto r = max_fwer_common_p(ev, 0.01);
  CHECK(r.max_fwer <= 0.15);
  CHECK(r.argmax_p[0] == Approx(0.5).epsilon(0.1));
  CHECK(min_fwp(ev, TrialConfig::example(2).delta, 0.01).fwp >= 0.8);

  // T = 0 lies above e1, so every trial stops after stage one.
  const BinomialDesign stop{2, 5, -5, -3, -8, -7, AllocationRatios{}};
  CHECK(binomial_ess(stop, std::vector<double>{0.0, 0.0, 0.0}) == Approx(15.0).epsilon(1e-12));

  std::stringstream csv;
  write_curves(ev, TrialConfig::example(2).delta, 0.05, csv);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 1 + 21);
}

TEST_CASE("full-space FWER search") {
  const Design d = two_arm_binomial();
  FullSearchOptions opt;
  opt.budget = 999;
  CHECK_THROWS_AS(max_fwer_full(d, opt), validation_error);
  opt.budget = 1000;
  const auto a = max_fwer_full(d, opt), b = max_fwer_full(d, opt);
  CHECK(a.search_trace == b.search_trace);
  CHECK(a.max_fwer >= max_fwer_common_p(d, 0.01).max_fwer - 1e-9);

  // A symmetric single-arm design: the exhaustive 2-D grid finds the peak on the diagonal.
  const BinomialDesign one{1, 10, 0, 4, 3, 4, AllocationRatios{}};
  opt.seed = 7;
  const auto full = max_fwer_full(Design(one), opt);
  double best = -1, best_dist = 0;
  for (double p0 : linear_grid(0.0, 1.0, 0.005))
    for (double p1 : linear_grid(0.0, 1.0, 0.005)) {
      const std::vector<double> p{p0, p1};
      const double v = binomial_fwer(one, p);
      if (v > best) best = v, best_dist = std::fabs(p0 - p1) / std::sqrt(2.0);
    }
  CHECK(best_dist <= 0.01);
  CHECK(full.distance_to_diagonal() <= 0.01);
  CHECK(full.max_fwer >= best - 1e-6);
}

TEST_CASE("simulation") {
  const Design d = two_arm_binomial();
  const std::vector<double> p{0.7, 0.7, 0.7};
  CHECK_THROWS_AS(simulate(d, p, 9999, 1), validation_error);
  const auto a = simulate(d, p, 20000, 11), b = simulate(d, p, 80000, 11);
  CHECK(b.ess_se / a.ess_se == Approx(0.5).epsilon(0.2));
  const auto exact = oc_at(d, p);
  CHECK(std::fabs(b.fwer - exact.fwer) <= 3.5 * b.fwer_se);
  CHECK(std::fabs(b.ess - exact.ess) <= 3.5 * b.ess_se);
}

TEST_CASE("configuration") {
  const TrialConfig cfg = config_from_json(nlohmann::json::parse(R"({"K": 2, "delta": 0.15, "p_ess": 0.7})"));
  CHECK(cfg.delta == std::vector<double>{0.0, 0.15, 0.15});
  CHECK(cfg.p_ess == std::vector<double>{0.7, 0.7, 0.7});
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"K": 2, "weights": [[0, 0, 1]]})")), validation_error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"K": 1, "delta": 0})")), validation_error);
  CHECK_THROWS_AS(
      config_from_json(nlohmann::json::parse(R"({"K": 1, "ratios": {"rC2": 2, "rE1": 0.3, "rE2": 2}, "n_max": 9})")),
      validation_error);
  CHECK(config_hash(cfg) == config_hash(config_from_json(config_to_json(cfg))));
}

TEST_CASE("objective") {
  TrialConfig cfg = TrialConfig::example(1);
  const FisherDesign d = FisherContext(FisherSpec::from(cfg), 46).build(0.04, 0.10);
  cfg.fisher_ess = FisherEss::null_conditional;
  CHECK(objective(d, cfg, Weights{1, 1, 1}) == Approx(131.54 + 131.27 + 184).epsilon(0.01 / 447));
  CHECK(objective(two_arm_fisher(), TrialConfig::example(2), Weights{1, 0, 0}) == Approx(154.2).epsilon(0.05 / 154.2));
  CHECK(single_stage_design(TrialConfig::example(2)).n == 75);
}

TEST_CASE("design files round trip") {
  const Design designs[] = {two_arm_binomial(), two_arm_fisher()};
  for (const auto& d : designs) {
    const auto cfg = TrialConfig::example(design_K(d));
    const auto report = design_report(d, cfg);
    const Design back = design_from_json(nlohmann::json::parse(report.dump()));
    for (const auto& p : {cfg.p_ess, p_ess_alternative(cfg)}) {
      const auto a = oc_at(d, p), b = oc_at(back, p);
      CHECK(a.ess == Approx(b.ess).epsilon(1e-9));
      CHECK(a.fwer == Approx(b.fwer).epsilon(1e-9));
    }
    auto trimmed = report;
    trimmed["provenance"].erase("timestamp");
    auto again = design_report(back, cfg);
    again["provenance"].erase("timestamp");
    CHECK(trimmed.dump() == again.dump());
  }
  auto j = design_to_json(two_arm_fisher());
  j["boundaries"]["e1"][10] = j["boundaries"]["e1"][10].get<int>() + 1;
  CHECK_THROWS_AS(design_from_json(j), validation_error);
  auto b = design_to_json(two_arm_binomial());
  b["e"][1] = 9;
  CHECK_THROWS_AS(design_from_json(b), validation_error);
}

TEST_CASE("oracle agreement on the smallest instances") {
  std::vector<OracleCase> cases;
  TrialConfig cfg = TrialConfig::example(1);
  for (const auto& d : enumerate_design_space(cfg, 2)) cases.push_back({"", d, {0.3, 0.6}});
  const FisherContext ctx(FisherSpec::from(TrialConfig::example(2)), 2);
  cases.push_back({"", ctx.build(0.05, 0.1), {0.2, 0.5, 0.5}});
  cases.push_back({"", ctx.build(0.14, 0.19), {0.7, 0.1, 0.9}});
  const auto r = compare_with_oracle(cases);
  CHECK(r.max_abs_diff <= 1e-12);
  const BinomialDesign big{2, 3, 0, 2, 2, 3, AllocationRatios{}};
  CHECK_THROWS_AS(brute_force_outcome_prob(big, std::vector<double>{0.5, 0.5, 0.5}, OutcomePair{2, 0, 0}),
                  validation_error);
}

TEST_CASE("property suite") {
  const auto rep = run_property_suite(20170101);
  CHECK(rep.results.size() >= 15);
  for (const auto& r : rep.results) {
    INFO(r.family << ": " << r.detail);
    CHECK(r.passed);
  }
}
