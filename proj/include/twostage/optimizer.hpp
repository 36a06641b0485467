#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "twostage/config.hpp"
#include "twostage/oc_eval.hpp"

namespace twostage {

struct ObjectiveTerms {
  double ess_null = 0.0;  // ESS(p_ESS)
  double ess_alt = 0.0;   // ESS(p_ESS + delta)
  int max_n = 0;          // n (r_C2 + K r_E2)

  double value(const Weights& w) const { return w.w1 * ess_null + w.w2 * ess_alt + w.w3 * max_n; }
};

/// p_ESS + delta, clipped to [0, 1].
std::vector<double> p_ess_alternative(const TrialConfig& cfg);

ObjectiveTerms objective_terms(const Evaluator& ev, const TrialConfig& cfg);
double objective(const Design& d, const TrialConfig& cfg, const Weights& w);

/// Single-stage exact-binomial design: every group has `n` subjects and arm k
/// is rejected when x_k - x_0 >= e.
struct FixedDesign {
  int n = 0;
  int e = 0;
  double max_fwer = 0.0;
  double min_fwp = 0.0;
};
/// Smallest group size whose best single-look design meets both constraints.
FixedDesign single_stage_design(const TrialConfig& cfg, int n_limit = 1000);

struct Candidate {
  Design design;
  ObjectiveTerms terms;
  double objective = 0.0;
  double max_fwer = 0.0;  // NaN when not evaluated
  double min_fwp = 0.0;
};

struct OptimizationResult {
  Weights weights;
  std::vector<Candidate> ranked;  // best first, at most 10

  const Candidate& best() const { return ranked.front(); }
};

struct OptimizationRun {
  std::string method;
  std::vector<OptimizationResult> results;  // one per weight vector, config order
  long candidates_evaluated = 0;
  double wall_seconds = 0.0;
  nlohmann::json metadata;
  std::vector<std::string> log;
};

inline constexpr int kRankedAlternatives = 10;

/// Exhaustive search over the binomial design space for n in
/// (n_min, n_max], n_max defaulting to ceil(0.75 n_fixed). Candidates are
/// visited in objective order and checked for feasibility lazily; a design
/// only counts once it also passes at twice the grid resolution. Throws
/// infeasible_error with the nearest miss when nothing qualifies.
OptimizationRun optimize_binomial(const TrialConfig& cfg, unsigned threads = 1);

/// Minimal n for every (alpha1, beta1) cell of the grid in one sweep, then
/// the best cell per weight vector. Cells without a feasible n are logged
/// and skipped.
OptimizationRun optimize_fisher(const TrialConfig& cfg, unsigned threads = 1);

nlohmann::json candidate_to_json(const Candidate& c, const Weights& w);
nlohmann::json run_to_json(const OptimizationRun& run, const TrialConfig& cfg);

/// One row per weight vector: the winning design, its ESS pair and max N.
std::string run_summary_table(const OptimizationRun& run);

}  // namespace twostage
