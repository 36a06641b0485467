#include "twostage/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>

#include "twostage/design_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"
#include "twostage/search.hpp"

namespace twostage {

namespace {

constexpr double kTol = 1e-12;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> shifted(double p, std::span<const double> delta) {
  std::vector<double> v(delta.size());
  for (std::size_t k = 0; k < delta.size(); ++k) v[k] = std::clamp(p + delta[k], 0.0, 1.0);
  return v;
}

// Evaluates p in a caller-supplied order, putting the index that decided the
// previous call first.
class Priority {
 public:
  explicit Priority(std::size_t size) : order_(size) { std::iota(order_.begin(), order_.end(), 0); }
  const std::vector<std::size_t>& order() const { return order_; }
  void promote(std::size_t idx) {
    auto it = std::find(order_.begin(), order_.end(), idx);
    std::rotate(order_.begin(), it, it + 1);
  }

 private:
  std::vector<std::size_t> order_;
};

}  // namespace

std::vector<double> p_ess_alternative(const TrialConfig& cfg) {
  std::vector<double> v(cfg.p_ess.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::min(1.0, cfg.p_ess[k] + cfg.delta[k]);
  return v;
}

ObjectiveTerms objective_terms(const Evaluator& ev, const TrialConfig& cfg) {
  ObjectiveTerms t;
  t.ess_null = ev.ess(cfg.p_ess, cfg.fisher_ess);
  t.ess_alt = ev.ess(p_ess_alternative(cfg), cfg.fisher_ess);
  t.max_n = design_max_sample_size(ev.design());
  return t;
}

double objective(const Design& d, const TrialConfig& cfg, const Weights& w) {
  return objective_terms(Evaluator(d), cfg).value(w);
}

// ---------------------------------------------------------------------------

namespace {

// P(no arm rejected) for the single-look design under p.
double fixed_no_rejection(int n, int e, std::span<const double> p, std::uint32_t capped) {
  const auto c = binom_pmf_vector(n, p[0]);
  std::vector<std::vector<double>> cdf;
  for (std::size_t k = 1; k < p.size(); ++k) cdf.push_back(cumulative(binom_pmf_vector(n, p[k])));
  CompensatedSum s;
  for (int x0 = 0; x0 <= n; ++x0) {
    double v = c[x0];
    const int top = x0 + e - 1;
    for (std::size_t k = 0; k < cdf.size(); ++k) {
      if (!((capped >> k) & 1u)) continue;
      v *= top < 0 ? 0.0 : top >= n ? 1.0 : cdf[k][top];
    }
    s += v;
  }
  return s.value();
}

}  // namespace

FixedDesign single_stage_design(const TrialConfig& cfg, int n_limit) {
  cfg.validate();
  const int K = cfg.K;
  const std::uint32_t all = (1u << K) - 1u;
  for (int n = 1; n <= n_limit; ++n) {
    // The smallest e meeting the error constraint maximizes power.
    for (int e = 1; e <= n; ++e) {
      auto fwer = [&](double p) { return 1.0 - fixed_no_rejection(n, e, std::vector<double>(K + 1, p), all); };
      const auto mx = grid_maximize(fwer, 0.0, 1.0, cfg.p_grid_step, cfg.refine);
      if (mx.value > cfg.alpha + kTol) continue;
      auto fwp = [&](double p) { return 1.0 - fixed_no_rejection(n, e, shifted(p, cfg.delta), all); };
      const auto mn = grid_minimize(fwp, 0.0, 1.0 - cfg.max_delta(), cfg.p_grid_step, cfg.refine);
      if (mn.value >= 1.0 - cfg.beta - kTol) return {n, e, mx.value, mn.value};
      break;
    }
  }
  throw infeasible_error("no single-stage design with group size up to " + std::to_string(n_limit));
}

// ---------------------------------------------------------------------------
// Binomial search

namespace {

// Full-space FWER search over each distinct winner when strong control is requested.
void verify_strong(OptimizationRun& run, const TrialConfig& cfg) {
  if (cfg.control != Control::strong) return;
  nlohmann::json out = nlohmann::json::array();
  std::vector<nlohmann::json> seen;
  for (const auto& res : run.results) {
    const auto dj = design_to_json(res.best().design);
    if (std::find(seen.begin(), seen.end(), dj) != seen.end()) continue;
    seen.push_back(dj);
    FullSearchOptions opt;
    opt.seed = cfg.seed;
    opt.diagonal_step = cfg.p_grid_step;
    const MaxFwerResult r = max_fwer_full(res.best().design, opt);
    const bool pass = r.max_fwer <= cfg.alpha + 1e-12;
    out.push_back({{"design", dj},
                   {"max_fwer", r.max_fwer},
                   {"argmax_p", r.argmax_p},
                   {"distance_to_diagonal", r.distance_to_diagonal()},
                   {"pass", pass}});
    if (!pass) run.log.push_back("strong-control verification failed for " + dj.dump());
  }
  run.metadata["strong_verification"] = std::move(out);
}

struct Triple {
  int n, f1, e1;
  ObjectiveTerms terms;
};

// ESS of every (f1, e1) for one n at one p; arms decide independently given x01.
void binomial_ess_table(int K, const StageSizes& s, std::span<const double> p,
                        std::vector<std::vector<double>>& out) {
  const auto c1 = binom_pmf_vector(s.control1, p[0]);
  std::vector<std::vector<double>> cdf(K);
  for (int k = 0; k < K; ++k) cdf[k] = cumulative(binom_pmf_vector(s.arm1, p[k + 1]));
  auto F = [&](int k, int x) { return x < 0 ? 0.0 : x >= s.arm1 ? 1.0 : cdf[k][x]; };
  const int lo = -s.control1;
  out.assign(s.arm1 - lo + 1, std::vector<double>(s.arm1 - lo + 1, 0.0));
  std::vector<double> acc(K), cont(K);
  for (int f1 = lo; f1 <= s.arm1 - 2; ++f1)
    for (int e1 = std::max(lo + 2, f1 + 2); e1 <= s.arm1; ++e1) {
      CompensatedSum ess;
      for (int x01 = 0; x01 <= s.control1; ++x01) {
        double all_open = 1.0, all_acc = 1.0;
        for (int k = 0; k < K; ++k) {
          acc[k] = F(k, x01 + f1);
          cont[k] = F(k, x01 + e1 - 1) - acc[k];
          all_open *= acc[k] + cont[k];
          all_acc *= acc[k];
        }
        double arms = 0.0;
        for (int k = 0; k < K; ++k) {
          double others = cont[k];
          for (int j = 0; j < K; ++j)
            if (j != k) others *= acc[j] + cont[j];
          arms += others;
        }
        ess += c1[x01] * (s.control2 * (all_open - all_acc) + s.arm2 * arms);
      }
      out[f1 - lo][e1 - lo] = s.stage_one_total(K) + ess.value();
    }
}

class BinomialFeasibility {
 public:
  BinomialFeasibility(const TrialConfig& cfg)
      : cfg_(cfg),
        null_grid_(linear_grid(0.0, 1.0, cfg.p_grid_step)),
        alt_grid_(linear_grid(0.0, 1.0 - cfg.max_delta(), cfg.p_grid_step)),
        null_order_(null_grid_.size()),
        alt_order_(alt_grid_.size()) {
    // FWER peaks in the middle of the range for most designs.
    null_order_.promote(null_grid_.size() / 2);
  }

  struct Verdict {
    bool feasible = false;
    int e2 = 0;
    double shortfall = kInf;  // distance to feasibility when infeasible
  };

  // Smallest e2 meeting the error constraint on the grid, then the power check.
  Verdict check(int n, int f1, int e1) {
    ++checks_;
    const int K = cfg_.K;
    const StageSizes s = StageSizes::from(n, cfg_.ratios);
    const std::uint32_t all = (1u << K) - 1u;
    const int lo2 = f1 + 2 - s.control2, hi2 = e1 + s.arm2;
    Verdict v;
    int e2 = lo2;
    bool first = true;
    for (std::size_t idx : std::vector<std::size_t>(null_order_.order())) {
      const BinomialKernel kernel(K, s, f1, e1, std::vector<double>(K + 1, null_grid_[idx]));
      auto fwer = [&](int e) { return 1.0 - kernel.no_rejection(all, e); };
      if (fwer(e2) > cfg_.alpha + kTol) {
        if (fwer(hi2) > cfg_.alpha + kTol) {
          v.shortfall = fwer(hi2) - cfg_.alpha;
          null_order_.promote(idx);
          return v;
        }
        int a = e2 + 1, b = hi2;
        while (a < b) {
          const int mid = a + (b - a) / 2;
          if (fwer(mid) <= cfg_.alpha + kTol)
            b = mid;
          else
            a = mid + 1;
        }
        e2 = a;
        null_order_.promote(idx);
      }
      if (first) {
        // Power only falls as e2 grows, so a failure here is final.
        first = false;
        const std::size_t a_idx = alt_order_.order().front();
        const BinomialKernel alt(K, s, f1, e1, shifted(alt_grid_[a_idx], cfg_.delta));
        const double fwp = alt.rejection(e2);
        if (fwp < 1.0 - cfg_.beta - kTol) {
          v.shortfall = 1.0 - cfg_.beta - fwp;
          return v;
        }
      }
    }
    for (std::size_t idx : std::vector<std::size_t>(alt_order_.order())) {
      const BinomialKernel alt(K, s, f1, e1, shifted(alt_grid_[idx], cfg_.delta));
      const double fwp = alt.rejection(e2);
      if (fwp < 1.0 - cfg_.beta - kTol) {
        alt_order_.promote(idx);
        v.shortfall = 1.0 - cfg_.beta - fwp;
        return v;
      }
    }
    v.feasible = true;
    v.e2 = e2;
    v.shortfall = 0.0;
    return v;
  }

  long checks() const { return checks_; }

 private:
  const TrialConfig& cfg_;
  std::vector<double> null_grid_, alt_grid_;
  Priority null_order_, alt_order_;
  long checks_ = 0;
};

BinomialDesign make_binomial(const TrialConfig& cfg, int n, int f1, int e1, int e2) {
  return {cfg.K, n, f1, e1, e2 - 1, e2, cfg.ratios};
}

}  // namespace

OptimizationRun optimize_binomial(const TrialConfig& cfg, unsigned threads) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  OptimizationRun run;
  run.method = "binomial";

  int n_hi = 0;
  if (cfg.n_max) {
    n_hi = *cfg.n_max;
  } else {
    const FixedDesign fixed = single_stage_design(cfg);
    n_hi = static_cast<int>(std::ceil(0.75 * fixed.n - 1e-9));
    run.metadata["n_fixed"] = fixed.n;
    run.metadata["n_fixed_e"] = fixed.e;
    run.log.push_back("single-stage group size n_fixed = " + std::to_string(fixed.n) + "; searching n <= " +
                      std::to_string(n_hi));
  }
  const int n_lo = std::max(cfg.n_min + 1, 1);
  run.metadata["n_range"] = {n_lo, n_hi};
  std::vector<int> ns;
  for (int n = n_lo; n <= n_hi; ++n)
    if (cfg.ratios.integral_for(n)) ns.push_back(n);
  if (ns.empty())
    throw validation_error("allocation ratios are not integral for any n in [" + std::to_string(n_lo) + ", " +
                           std::to_string(n_hi) + "]");

  // Objective terms depend on (n, f1, e1) only.
  std::vector<std::vector<Triple>> per_n(ns.size());
  const auto alt = p_ess_alternative(cfg);
  parallel_for(ns.size(), threads, [&](std::size_t i) {
    const int n = ns[i];
    const StageSizes s = StageSizes::from(n, cfg.ratios);
    std::vector<std::vector<double>> null_ess, alt_ess;
    binomial_ess_table(cfg.K, s, cfg.p_ess, null_ess);
    binomial_ess_table(cfg.K, s, alt, alt_ess);
    const int lo = -s.control1;
    for (int f1 = lo; f1 <= s.arm1 - 2; ++f1)
      for (int e1 = std::max(lo + 2, f1 + 2); e1 <= s.arm1; ++e1)
        per_n[i].push_back({n, f1, e1, {null_ess[f1 - lo][e1 - lo], alt_ess[f1 - lo][e1 - lo], s.max_total(cfg.K)}});
  });
  std::vector<Triple> triples;
  for (auto& v : per_n) triples.insert(triples.end(), v.begin(), v.end());
  run.candidates_evaluated = static_cast<long>(triples.size());

  BinomialFeasibility feas(cfg);
  std::map<std::tuple<int, int, int>, std::optional<Candidate>> verdicts;
  std::optional<std::pair<double, Triple>> nearest;
  const double fine_step = cfg.p_grid_step / 2.0;

  auto evaluate = [&](const Triple& t) -> const std::optional<Candidate>& {
    auto key = std::make_tuple(t.n, t.f1, t.e1);
    auto it = verdicts.find(key);
    if (it != verdicts.end()) return it->second;
    std::optional<Candidate> out;
    const auto v = feas.check(t.n, t.f1, t.e1);
    if (v.feasible) {
      const Evaluator ev(make_binomial(cfg, t.n, t.f1, t.e1, v.e2));
      const auto fwer = max_fwer_common_p(ev, fine_step, true);
      const auto power = min_fwp(ev, cfg.delta, fine_step, true);
      if (fwer.max_fwer <= cfg.alpha + kTol && power.fwp >= 1.0 - cfg.beta - kTol) {
        out = Candidate{ev.design(), t.terms, 0.0, fwer.max_fwer, power.fwp};
      } else {
        std::ostringstream m;
        m << "n=" << t.n << " f1=" << t.f1 << " e1=" << t.e1 << " e2=" << v.e2
          << " passes the search grid but not the verification grid (max FWER " << fwer.max_fwer
          << ", min FWP " << power.fwp << ")";
        run.log.push_back(m.str());
      }
    } else if (!nearest || v.shortfall < nearest->first) {
      nearest = std::make_pair(v.shortfall, t);
    }
    return verdicts.emplace(key, std::move(out)).first->second;
  };

  std::vector<std::size_t> order(triples.size());
  for (const Weights& w : cfg.weights) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const Triple &x = triples[a], &y = triples[b];
      const double ox = x.terms.value(w), oy = y.terms.value(w);
      if (ox != oy) return ox < oy;
      if (x.n != y.n) return x.n < y.n;
      if (x.terms.max_n != y.terms.max_n) return x.terms.max_n < y.terms.max_n;
      return std::tie(x.f1, x.e1) < std::tie(y.f1, y.e1);
    });
    OptimizationResult res;
    res.weights = w;
    for (std::size_t i : order) {
      const auto& c = evaluate(triples[i]);
      if (!c) continue;
      Candidate cand = *c;
      cand.objective = cand.terms.value(w);
      res.ranked.push_back(std::move(cand));
      if (static_cast<int>(res.ranked.size()) == kRankedAlternatives) break;
    }
    if (res.ranked.empty()) {
      std::ostringstream m;
      m << "no feasible binomial design for n in [" << n_lo << ", " << n_hi << "]";
      if (nearest)
        m << "; nearest miss n=" << nearest->second.n << " f1=" << nearest->second.f1
          << " e1=" << nearest->second.e1 << " misses a constraint by " << nearest->first;
      throw infeasible_error(m.str());
    }
    run.results.push_back(std::move(res));
  }
  run.metadata["feasibility_checks"] = feas.checks();
  run.metadata["p_grid_step"] = cfg.p_grid_step;
  run.metadata["verification_step"] = fine_step;
  verify_strong(run, cfg);
  run.wall_seconds = seconds_since(t0);
  return run;
}

// ---------------------------------------------------------------------------
// Fisher sweep

namespace {

struct Cell {
  double alpha1, beta1;
  std::optional<FisherDesign> design;
  ObjectiveTerms terms;
  double min_fwp = kNaN;
};

// Grid minimum of FWP with refinement, abandoning the grid at the first point
// below target. The verdict equals fisher_min_fwp(d) compared with the target.
std::optional<MinFwp> power_if_feasible(const Evaluator& ev, const FisherSpec& spec, double target,
                                        const std::vector<double>& grid, std::vector<std::size_t>& order,
                                        std::mutex& order_mutex) {
  std::vector<std::size_t> local;
  {
    std::lock_guard lock(order_mutex);
    local = order;
  }
  std::map<double, double> memo;
  auto fwp = [&](double p) {
    auto it = memo.find(p);
    if (it != memo.end()) return it->second;
    const double v = ev.fwp(ev.common_shifted(p, spec.delta));
    memo.emplace(p, v);
    return v;
  };
  for (std::size_t idx : local) {
    if (fwp(grid[idx]) < target) {
      std::lock_guard lock(order_mutex);
      auto it = std::find(order.begin(), order.end(), idx);
      std::rotate(order.begin(), it, it + 1);
      return std::nullopt;
    }
  }
  const auto r = grid_minimize(fwp, 0.0, 1.0 - spec.max_delta(), spec.p_grid_step, spec.refine);
  if (r.value < target) return std::nullopt;
  return MinFwp{r.x, r.value};
}

}  // namespace

OptimizationRun optimize_fisher(const TrialConfig& cfg, unsigned threads) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  OptimizationRun run;
  run.method = "fisher";
  const FisherSpec spec = FisherSpec::from(cfg);
  const int n_lo = std::max(cfg.n_min + 1, 1);
  const int n_hi = cfg.n_max.value_or(kDefaultFisherNMax);
  const double target = 1.0 - cfg.beta - kTol;
  const auto grid = linear_grid(0.0, 1.0 - spec.max_delta(), spec.p_grid_step);
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::mutex order_mutex;

  std::vector<Cell> cells;
  for (double a : cfg.alpha1_grid.values())
    for (double b : cfg.beta1_grid.values()) cells.push_back({a, b, std::nullopt, {}, kNaN});
  for (const auto& c : cells)
    if (!(c.alpha1 > 0.0 && c.alpha1 < cfg.alpha && c.beta1 > 0.0 && c.beta1 < cfg.beta))
      throw validation_error("alpha1 grid must lie in (0, alpha) and beta1 grid in (0, beta)");

  std::vector<std::size_t> open(cells.size());
  std::iota(open.begin(), open.end(), 0);
  long designs_checked = 0;
  bool any_integral = false;
  for (int n = n_lo; n <= n_hi && !open.empty(); ++n) {
    if (!cfg.ratios.integral_for(n)) continue;
    any_integral = true;
    const FisherContext ctx(spec, n);
    // Cells sharing (f1, e1) share the whole design.
    std::map<std::pair<int, std::vector<int>>, std::vector<std::size_t>> groups;
    for (std::size_t i : open) {
      auto b = ctx.stage_one(cells[i].alpha1, cells[i].beta1);
      groups[{b.f1, std::move(b.e1)}].push_back(i);
    }
    std::vector<std::pair<std::pair<int, std::vector<int>>, std::vector<std::size_t>>> work(groups.begin(),
                                                                                           groups.end());
    std::vector<std::optional<FisherDesign>> found(work.size());
    std::vector<MinFwp> power(work.size());
    parallel_for(work.size(), threads, [&](std::size_t g) {
      const auto& [key, members] = work[g];
      const Cell& first = cells[members.front()];
      FisherBoundaries b;
      b.f1 = key.first;
      b.e1 = key.second;
      FisherDesign d = ctx.complete(first.alpha1, first.beta1, std::move(b));
      const Evaluator ev(d);
      const auto r = power_if_feasible(ev, spec, target, grid, order, order_mutex);
      if (r) {
        found[g] = std::move(d);
        power[g] = *r;
      }
    });
    designs_checked += static_cast<long>(work.size());
    std::vector<std::size_t> still_open;
    std::vector<std::size_t> resolved;
    for (std::size_t g = 0; g < work.size(); ++g) {
      for (std::size_t i : work[g].second) {
        if (!found[g]) {
          still_open.push_back(i);
          continue;
        }
        FisherDesign d = *found[g];
        d.alpha1 = cells[i].alpha1;
        d.beta1 = cells[i].beta1;
        cells[i].design = std::move(d);
        cells[i].min_fwp = power[g].fwp;
        resolved.push_back(i);
      }
    }
    std::vector<ObjectiveTerms> terms(resolved.size());
    parallel_for(resolved.size(), threads, [&](std::size_t r) {
      terms[r] = objective_terms(Evaluator(*cells[resolved[r]].design), cfg);
    });
    for (std::size_t r = 0; r < resolved.size(); ++r) cells[resolved[r]].terms = terms[r];
    std::sort(still_open.begin(), still_open.end());
    open = std::move(still_open);
  }
  if (!any_integral)
    throw validation_error("allocation ratios are not integral for any n in [" + std::to_string(n_lo) + ", " +
                           std::to_string(n_hi) + "]");
  for (std::size_t i : open) {
    std::ostringstream m;
    m << "alpha1=" << cells[i].alpha1 << " beta1=" << cells[i].beta1 << ": no n <= " << n_hi
      << " attains the power requirement; skipped";
    run.log.push_back(m.str());
  }
  run.candidates_evaluated = designs_checked;

  std::vector<std::size_t> done;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].design) done.push_back(i);
  if (done.empty()) throw infeasible_error("no (alpha1, beta1) cell has a feasible n <= " + std::to_string(n_hi));

  for (const Weights& w : cfg.weights) {
    auto ranked = done;
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      const Cell &x = cells[a], &y = cells[b];
      const double ox = x.terms.value(w), oy = y.terms.value(w);
      if (ox != oy) return ox < oy;
      if (x.design->n != y.design->n) return x.design->n < y.design->n;
      if (x.terms.max_n != y.terms.max_n) return x.terms.max_n < y.terms.max_n;
      return std::tie(x.alpha1, x.beta1) < std::tie(y.alpha1, y.beta1);
    });
    OptimizationResult res;
    res.weights = w;
    for (std::size_t j = 0; j < ranked.size() && j < static_cast<std::size_t>(kRankedAlternatives); ++j) {
      const Cell& c = cells[ranked[j]];
      res.ranked.push_back({*c.design, c.terms, c.terms.value(w), kNaN, c.min_fwp});
    }
    run.results.push_back(std::move(res));
  }

  // Weak control holds by construction; the check below reports it for the winners.
  std::map<std::pair<double, double>, double> fwer_cache;
  for (auto& res : run.results) {
    auto& best = res.ranked.front();
    const auto& d = std::get<FisherDesign>(best.design);
    auto key = std::make_pair(d.alpha1, d.beta1);
    auto it = fwer_cache.find(key);
    if (it == fwer_cache.end())
      it = fwer_cache.emplace(key, max_fwer_common_p(Evaluator(d), cfg.p_grid_step, cfg.refine).max_fwer).first;
    best.max_fwer = it->second;
  }

  nlohmann::json grid_json = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json g = {{"alpha1", c.alpha1}, {"beta1", c.beta1}};
    if (c.design) {
      g["n"] = c.design->n;
      g["min_fwp"] = c.min_fwp;
      g["ess_null"] = c.terms.ess_null;
      g["ess_alt"] = c.terms.ess_alt;
      g["max_n"] = c.terms.max_n;
    } else {
      g["n"] = nullptr;
    }
    grid_json.push_back(std::move(g));
  }
  run.metadata["cells"] = std::move(grid_json);
  run.metadata["n_range"] = {n_lo, n_hi};
  run.metadata["ess_convention"] = to_string(cfg.fisher_ess);
  verify_strong(run, cfg);
  run.wall_seconds = seconds_since(t0);
  return run;
}

// ---------------------------------------------------------------------------

nlohmann::json candidate_to_json(const Candidate& c, const Weights& w) {
  nlohmann::json j;
  j["design"] = design_to_json(c.design);
  j["objective"] = c.objective;
  j["objective_terms"] = {{"w", {w.w1, w.w2, w.w3}},
                          {"ess_p_ess", c.terms.ess_null},
                          {"ess_p_ess_plus_delta", c.terms.ess_alt},
                          {"max_n", c.terms.max_n}};
  j["max_fwer"] = std::isnan(c.max_fwer) ? nlohmann::json(nullptr) : nlohmann::json(c.max_fwer);
  j["min_fwp"] = c.min_fwp;
  return j;
}

nlohmann::json run_to_json(const OptimizationRun& run, const TrialConfig& cfg) {
  nlohmann::json j;
  j["method"] = run.method;
  nlohmann::json results = nlohmann::json::array();
  for (const auto& r : run.results) {
    nlohmann::json e;
    e["weights"] = {r.weights.w1, r.weights.w2, r.weights.w3};
    e["best"] = candidate_to_json(r.best(), r.weights);
    e["best"]["constraint_margins"] = {
        {"alpha_minus_max_fwer", std::isnan(r.best().max_fwer) ? nlohmann::json(nullptr)
                                                               : nlohmann::json(cfg.alpha - r.best().max_fwer)},
        {"min_fwp_minus_power", r.best().min_fwp - (1.0 - cfg.beta)}};
    nlohmann::json alts = nlohmann::json::array();
    for (std::size_t i = 1; i < r.ranked.size(); ++i) alts.push_back(candidate_to_json(r.ranked[i], r.weights));
    e["alternatives"] = std::move(alts);
    results.push_back(std::move(e));
  }
  j["results"] = std::move(results);
  j["candidates_evaluated"] = run.candidates_evaluated;
  j["wall_seconds"] = run.wall_seconds;
  j["metadata"] = run.metadata;
  j["log"] = run.log;
  j["config"] = config_to_json(cfg);
  j["provenance"] = {{"config_hash", config_hash(cfg)}, {"version", kVersion}};
  return j;
}

std::string run_summary_table(const OptimizationRun& run) {
  std::ostringstream s;
  s << std::fixed;
  if (run.method == "fisher") {
    s << std::left << std::setw(18) << "w" << std::right << std::setw(8) << "alpha1" << std::setw(8) << "beta1"
      << std::setw(6) << "n" << std::setw(12) << "ESS(p)" << std::setw(14) << "ESS(p+d)" << std::setw(8) << "maxN"
      << '\n';
    for (const auto& r : run.results) {
      const auto& c = r.best();
      const auto& d = std::get<FisherDesign>(c.design);
      s << std::left << std::setw(18) << r.weights.to_string() << std::right << std::setprecision(2)
        << std::setw(8) << d.alpha1 << std::setw(8) << d.beta1 << std::setw(6) << d.n << std::setw(12)
        << c.terms.ess_null << std::setw(14) << c.terms.ess_alt << std::setw(8) << c.terms.max_n << '\n';
    }
  } else {
    s << std::left << std::setw(18) << "w" << std::right << std::setw(6) << "n" << std::setw(5) << "f1"
      << std::setw(5) << "e1" << std::setw(5) << "f2" << std::setw(10) << "ESS(p)" << std::setw(12) << "ESS(p+d)"
      << std::setw(8) << "maxN" << '\n';
    for (const auto& r : run.results) {
      const auto& c = r.best();
      const auto& d = std::get<BinomialDesign>(c.design);
      s << std::left << std::setw(18) << r.weights.to_string() << std::right << std::setw(6) << d.n
        << std::setw(5) << d.f1 << std::setw(5) << d.e1 << std::setw(5) << d.f2 << std::setprecision(2)
        << std::setw(10) << c.terms.ess_null << std::setw(12) << c.terms.ess_alt << std::setw(8)
        << c.terms.max_n << '\n';
    }
  }
  return s.str();
}

}  // namespace twostage
