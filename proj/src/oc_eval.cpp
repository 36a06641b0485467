#include "twostage/oc_eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "twostage/errors.hpp"
#include "twostage/exact_math.hpp"
#include "twostage/search.hpp"

namespace twostage {

namespace {

constexpr double kNormalizationTol = 1e-9;
constexpr long kSimulationChunk = 4096;

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

void check_length(const Design& d, std::span<const double> p) {
  if (static_cast<int>(p.size()) != design_K(d) + 1) throw validation_error("p needs K + 1 entries");
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw validation_error("p entries must lie in [0, 1]");
}

}  // namespace

int design_K(const Design& d) {
  return std::visit(overloaded{[](const BinomialDesign& b) { return b.K; },
                               [](const FisherDesign& f) { return f.K(); }},
                    d);
}

int design_n(const Design& d) {
  return std::visit([](const auto& x) { return x.n; }, d);
}

StageSizes design_sizes(const Design& d) {
  return std::visit([](const auto& x) { return x.sizes(); }, d);
}

int design_max_sample_size(const Design& d) {
  return std::visit([](const auto& x) { return x.max_sample_size(); }, d);
}

const char* design_method(const Design& d) {
  return std::holds_alternative<BinomialDesign>(d) ? "binomial" : "fisher";
}

int sample_size(const StageSizes& s, const OutcomePair& o) {
  int total = o.max_omega() == 2 ? s.control1 + s.control2 : s.control1;
  for (int k = 1; k <= o.K; ++k) total += o.omega(k) == 2 ? s.arm1 + s.arm2 : s.arm1;
  return total;
}

OCReport oc_at(const Design& d, std::span<const double> p) {
  check_length(d, p);
  const int K = design_K(d);
  const auto probs = std::holds_alternative<BinomialDesign>(d)
                         ? outcome_distribution_binomial(std::get<BinomialDesign>(d), p)
                         : outcome_distribution_fisher(std::get<FisherDesign>(d), p);
  const OutcomeSpace space = enumerate_outcomes(K);
  const StageSizes s = design_sizes(d);
  CompensatedSum total, fwer, fwp, ess;
  std::vector<CompensatedSum> arm(K);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const OutcomePair& o = space[i];
    const double pr = probs[i];
    total += pr;
    if (in_xi_rej(o)) fwp += pr;
    if (in_xi_fwer(o, p)) fwer += pr;
    for (int k = 1; k <= K; ++k)
      if (in_xi_ind(o, k)) arm[k - 1] += pr;
    ess += pr * sample_size(s, o);
  }
  if (std::fabs(total.value() - 1.0) > kNormalizationTol) {
    std::ostringstream msg;
    msg << std::setprecision(15) << "outcome probabilities sum to " << total.value();
    throw consistency_error(msg.str());
  }
  OCReport r;
  r.p.assign(p.begin(), p.end());
  r.fwer = fwer.value();
  r.fwp = fwp.value();
  r.ess = ess.value();
  for (auto& a : arm) r.per_arm_reject.push_back(a.value());
  return r;
}

// ---------------------------------------------------------------------------

Evaluator::Evaluator(Design d) : design_(std::move(d)) {
  if (const auto* f = std::get_if<FisherDesign>(&design_)) {
    lattice_ = std::make_unique<StageOneLattice>(StageOneLattice::build(f->K(), f->sizes()));
    plan_ = std::make_unique<FisherPlan>(*lattice_, f->boundaries.f1, f->boundaries.e1);
  }
}

double Evaluator::no_rejection(std::span<const double> p, std::uint32_t capped) const {
  check_length(design_, p);
  if (const auto* b = std::get_if<BinomialDesign>(&design_)) return binomial_no_rejection(*b, p, capped);
  const auto& f = std::get<FisherDesign>(design_);
  const FisherPoint pt(*lattice_, p);
  return fisher_no_rejection(*plan_, f.boundaries, pt, capped);
}

double Evaluator::fwer(std::span<const double> p) const {
  const auto nulls = true_null_mask(p);
  if (!nulls) return 0.0;
  return 1.0 - no_rejection(p, nulls);
}

double Evaluator::fwp(std::span<const double> p) const {
  return 1.0 - no_rejection(p, (1u << K()) - 1u);
}

double Evaluator::ess(std::span<const double> p, FisherEss convention) const {
  check_length(design_, p);
  if (const auto* b = std::get_if<BinomialDesign>(&design_)) return binomial_ess(*b, p);
  const FisherPoint pt(*lattice_, p);
  return fisher_ess(*plan_, pt, convention);
}

std::vector<double> Evaluator::distribution(std::span<const double> p) const {
  check_length(design_, p);
  if (const auto* b = std::get_if<BinomialDesign>(&design_)) return outcome_distribution_binomial(*b, p);
  const FisherPoint pt(*lattice_, p);
  return fisher_outcome_distribution(*plan_, std::get<FisherDesign>(design_).boundaries, pt);
}

std::vector<double> Evaluator::common(double p) const {
  return std::vector<double>(K() + 1, p);
}

std::vector<double> Evaluator::common_shifted(double p, std::span<const double> delta) const {
  std::vector<double> v(K() + 1);
  for (int k = 0; k <= K(); ++k) v[k] = std::clamp(p + delta[k], 0.0, 1.0);
  return v;
}

// ---------------------------------------------------------------------------

double MaxFwerResult::distance_to_diagonal() const {
  if (argmax_p.empty()) return 0.0;
  double mean = 0.0;
  for (double v : argmax_p) mean += v;
  mean /= static_cast<double>(argmax_p.size());
  double ss = 0.0;
  for (double v : argmax_p) ss += (v - mean) * (v - mean);
  return std::sqrt(ss);
}

MaxFwerResult max_fwer_common_p(const Evaluator& ev, double step, bool refine) {
  if (!(step > 0.0 && step <= 0.01)) throw validation_error("common-p grid step must lie in (0, 0.01]");
  const auto r = grid_maximize([&](double p) { return ev.fwer(ev.common(p)); }, 0.0, 1.0, step, refine);
  MaxFwerResult out;
  out.argmax_p = ev.common(r.x);
  out.max_fwer = r.value;
  for (const auto& [x, v] : r.trace) out.search_trace.emplace_back(ev.common(x), v);
  return out;
}

MaxFwerResult max_fwer_common_p(const Design& d, double step, bool refine) {
  return max_fwer_common_p(Evaluator(d), step, refine);
}

MaxFwerResult max_fwer_full(const Evaluator& ev, const FullSearchOptions& opt) {
  if (opt.budget < 1000) throw validation_error("full-space search needs a budget of at least 1000");
  if (opt.restarts < 1) throw validation_error("full-space search needs at least one restart");
  const int K = ev.K();
  MaxFwerResult out;
  int used = 0;

  auto record = [&](const std::vector<double>& p, double v) {
    out.search_trace.emplace_back(p, v);
    ++used;
    if (out.search_trace.size() == 1 || v > out.max_fwer + 1e-15) {
      out.max_fwer = v;
      out.argmax_p = p;
    }
  };

  const auto diag = max_fwer_common_p(ev, opt.diagonal_step, true);
  for (const auto& [p, v] : diag.search_trace) record(p, v);
  const double p_star = diag.argmax_p[0];

  std::vector<std::uint32_t> masks;
  for (std::uint32_t m = 1; m < (1u << K); ++m) masks.push_back(m);
  std::sort(masks.begin(), masks.end(), [](std::uint32_t a, std::uint32_t b) {
    const int pa = std::popcount(a), pb = std::popcount(b);
    return pa != pb ? pa > pb : a < b;
  });

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int r = 0; r < opt.restarts && used < opt.budget; ++r) {
    const std::uint32_t nulls = masks[r % masks.size()];
    // Coordinates: p_0, then each non-null arm.
    std::vector<int> free_arms;
    for (int k = 1; k <= K; ++k)
      if (!((nulls >> (k - 1)) & 1u)) free_arms.push_back(k);
    std::vector<double> x(1 + free_arms.size());
    if (r < static_cast<int>(masks.size())) {
      std::fill(x.begin(), x.end(), p_star);
      // Non-null arms start a small step away so that they are not tied to p_0.
      for (std::size_t j = 1; j < x.size(); ++j) x[j] = p_star + (p_star < 0.5 ? opt.final_step : -opt.final_step);
    } else {
      for (double& v : x) v = unit(rng);
    }
    auto expand = [&](const std::vector<double>& y) {
      std::vector<double> p(K + 1, y[0]);
      for (std::size_t j = 0; j < free_arms.size(); ++j) p[free_arms[j]] = y[j + 1];
      // A free coordinate landing exactly on p_0 would silently become a null.
      for (int k : free_arms)
        if (p[k] == p[0]) p[k] = std::nextafter(p[0], p[0] < 0.5 ? 1.0 : 0.0);
      return p;
    };
    auto eval = [&](const std::vector<double>& y) {
      const auto p = expand(y);
      const double v = ev.fwer(p);
      record(p, v);
      return v;
    };

    const int remaining_restarts = opt.restarts - r;
    const int allowance = (opt.budget - used) / remaining_restarts;
    const int stop_at = used + std::max(allowance, 1);
    double fx = eval(x);
    double step = opt.initial_step;
    while (step >= opt.final_step && used < stop_at) {
      bool moved = false;
      for (std::size_t j = 0; j < x.size() && used < stop_at; ++j) {
        for (double dir : {1.0, -1.0}) {
          if (used >= stop_at) break;
          auto y = x;
          y[j] = std::clamp(x[j] + dir * step, 0.0, 1.0);
          if (y[j] == x[j]) continue;
          const double fy = eval(y);
          if (fy > fx) {
            x = std::move(y);
            fx = fy;
            moved = true;
            break;
          }
        }
      }
      if (!moved) step /= 2.0;
    }
  }
  return out;
}

MaxFwerResult max_fwer_full(const Design& d, const FullSearchOptions& opt) {
  return max_fwer_full(Evaluator(d), opt);
}

MinFwp min_fwp(const Evaluator& ev, std::span<const double> delta, double step, bool refine) {
  if (static_cast<int>(delta.size()) != ev.K() + 1) throw validation_error("delta needs K + 1 entries");
  double max_delta = 0.0;
  for (std::size_t k = 1; k < delta.size(); ++k) {
    if (!(delta[k] > 0.0)) throw validation_error("delta_k must be positive");
    max_delta = std::max(max_delta, delta[k]);
  }
  const auto r = grid_minimize([&](double p) { return ev.fwp(ev.common_shifted(p, delta)); }, 0.0,
                               1.0 - max_delta, step, refine);
  return {r.x, r.value};
}

MinFwp min_fwp(const Design& d, std::span<const double> delta, double step, bool refine) {
  return min_fwp(Evaluator(d), delta, step, refine);
}

// ---------------------------------------------------------------------------

namespace {

struct ChunkTally {
  long reps = 0;
  long fwer = 0;
  long fwp = 0;
  double n_sum = 0.0;
  double n_sq = 0.0;
  std::vector<long> arm;
};

OutcomePair conduct(const Design& d, const TrialData& x) {
  if (const auto* b = std::get_if<BinomialDesign>(&d)) return conduct_binomial(*b, x);
  return conduct_fisher(std::get<FisherDesign>(d), x);
}

}  // namespace

SimulationReport simulate(const Design& d, std::span<const double> p, long reps, std::uint64_t seed,
                          unsigned threads) {
  check_length(d, p);
  if (reps < 10000) throw validation_error("simulation needs at least 10^4 replicates");
  const int K = design_K(d);
  const StageSizes s = design_sizes(d);
  const std::uint32_t nulls = true_null_mask(p);
  const long chunks = (reps + kSimulationChunk - 1) / kSimulationChunk;
  std::vector<ChunkTally> tally(static_cast<std::size_t>(chunks));

  parallel_for(tally.size(), threads, [&](std::size_t c) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<std::binomial_distribution<int>> draw1, draw2;
    for (int k = 0; k <= K; ++k) {
      draw1.emplace_back(k == 0 ? s.control1 : s.arm1, p[k]);
      draw2.emplace_back(k == 0 ? s.control2 : s.arm2, p[k]);
    }
    ChunkTally& t = tally[c];
    t.arm.assign(K, 0);
    const long begin = static_cast<long>(c) * kSimulationChunk;
    t.reps = std::min(kSimulationChunk, reps - begin);
    TrialData x;
    x.stage1.resize(K + 1);
    x.stage2.resize(K + 1);
    for (long i = 0; i < t.reps; ++i) {
      for (int k = 0; k <= K; ++k) x.stage1[k] = draw1[k](rng);
      for (int k = 0; k <= K; ++k) x.stage2[k] = draw2[k](rng);
      const OutcomePair o = conduct(d, x);
      if (o.rejected & nulls) ++t.fwer;
      if (o.rejected) ++t.fwp;
      for (int k = 0; k < K; ++k)
        if ((o.rejected >> k) & 1u) ++t.arm[k];
      const double n = sample_size(s, o);
      t.n_sum += n;
      t.n_sq += n * n;
    }
  });

  long fwer = 0, fwp = 0;
  std::vector<long> arm(K, 0);
  double n_sum = 0.0, n_sq = 0.0;
  for (const auto& t : tally) {
    fwer += t.fwer;
    fwp += t.fwp;
    for (int k = 0; k < K; ++k) arm[k] += t.arm[k];
    n_sum += t.n_sum;
    n_sq += t.n_sq;
  }
  const double R = static_cast<double>(reps);
  auto prop_se = [R](double q) { return std::sqrt(q * (1.0 - q) / R); };

  SimulationReport r;
  r.p.assign(p.begin(), p.end());
  r.reps = reps;
  r.seed = seed;
  r.fwer = fwer / R;
  r.fwer_se = prop_se(r.fwer);
  r.fwp = fwp / R;
  r.fwp_se = prop_se(r.fwp);
  r.ess = n_sum / R;
  const double var = std::max(0.0, (n_sq - R * r.ess * r.ess) / (R - 1.0));
  r.ess_se = std::sqrt(var / R);
  for (int k = 0; k < K; ++k) {
    r.per_arm_reject.push_back(arm[k] / R);
    r.per_arm_se.push_back(prop_se(r.per_arm_reject.back()));
  }
  return r;
}

void write_curves(const Evaluator& ev, std::span<const double> delta, double step, std::ostream& out,
                  FisherEss convention) {
  if (!(step > 0.0 && step <= 0.05)) throw validation_error("curve step must lie in (0, 0.05]");
  if (static_cast<int>(delta.size()) != ev.K() + 1) throw validation_error("delta needs K + 1 entries");
  double max_delta = 0.0;
  for (std::size_t k = 1; k < delta.size(); ++k) max_delta = std::max(max_delta, delta[k]);

  out << "p,fwer,fwp,ess_null,ess_alt\n";
  out << std::fixed << std::setprecision(6);
  for (double p : linear_grid(0.0, 1.0, step)) {
    const auto null_p = ev.common(p);
    out << p << ',' << ev.fwer(null_p) << ',';
    const bool alt = p <= 1.0 - max_delta + 1e-9;
    std::vector<double> alt_p;
    if (alt) {
      alt_p = ev.common_shifted(p, delta);
      out << ev.fwp(alt_p);
    }
    out << ',' << ev.ess(null_p, convention) << ',';
    if (alt) out << ev.ess(alt_p, convention);
    out << '\n';
  }
}

}  // namespace twostage
