#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <variant>
#include <vector>

#include "twostage/binomial_design.hpp"
#include "twostage/fisher_design.hpp"

namespace twostage {

using Design = std::variant<BinomialDesign, FisherDesign>;

int design_K(const Design& d);
int design_n(const Design& d);
StageSizes design_sizes(const Design& d);
int design_max_sample_size(const Design& d);
const char* design_method(const Design& d);

/// Total subjects recruited when the trial ends in outcome o.
int sample_size(const StageSizes& s, const OutcomePair& o);

struct OCReport {
  std::vector<double> p;
  double fwer = 0.0;
  double fwp = 0.0;
  double ess = 0.0;
  std::vector<double> per_arm_reject;
};

/// Exact operating characteristics from the full outcome distribution.
/// Throws consistency_error when the distribution does not sum to 1 within 1e-9.
OCReport oc_at(const Design& d, std::span<const double> p);

/// Repeated evaluation of one design. For Fisher designs the stage-one
/// lattice and its classification are built once.
class Evaluator {
 public:
  explicit Evaluator(Design d);
  Evaluator(const Evaluator&) = delete;
  Evaluator& operator=(const Evaluator&) = delete;

  const Design& design() const { return design_; }
  int K() const { return design_K(design_); }

  double no_rejection(std::span<const double> p, std::uint32_t capped) const;
  double fwer(std::span<const double> p) const;
  double fwp(std::span<const double> p) const;
  double ess(std::span<const double> p, FisherEss convention = FisherEss::exact) const;
  std::vector<double> distribution(std::span<const double> p) const;

  std::vector<double> common(double p) const;
  std::vector<double> common_shifted(double p, std::span<const double> delta) const;

 private:
  Design design_;
  std::unique_ptr<StageOneLattice> lattice_;
  std::unique_ptr<FisherPlan> plan_;
};

struct MaxFwerResult {
  std::vector<double> argmax_p;
  double max_fwer = 0.0;
  std::vector<std::pair<std::vector<double>, double>> search_trace;

  /// Euclidean distance from argmax_p to the line p_0 = ... = p_K.
  double distance_to_diagonal() const;
};

MaxFwerResult max_fwer_common_p(const Evaluator& ev, double step, bool refine = true);
MaxFwerResult max_fwer_common_p(const Design& d, double step, bool refine = true);

struct FullSearchOptions {
  int budget = 2000;
  std::uint64_t seed = 20170101;
  int restarts = 20;
  double initial_step = 0.1;
  double final_step = 0.001;
  double diagonal_step = 0.01;
};

/// Multi-start compass search over [0,1]^{K+1}. FWER only changes on the
/// sets where some p_k equals p_0, so each restart fixes a nonempty set of
/// null arms tied to p_0 and moves p_0 with the remaining arms. The first
/// restarts start from the best common-p point. Throws validation_error
/// when budget < 1000.
MaxFwerResult max_fwer_full(const Evaluator& ev, const FullSearchOptions& opt);
MaxFwerResult max_fwer_full(const Design& d, const FullSearchOptions& opt);

struct MinFwp {
  double p = 0.0;
  double fwp = 0.0;
};

/// min over p in [0, 1 - max delta] of FWP((p,...,p) + delta).
MinFwp min_fwp(const Evaluator& ev, std::span<const double> delta, double step, bool refine = true);
MinFwp min_fwp(const Design& d, std::span<const double> delta, double step, bool refine = true);

struct SimulationReport {
  std::vector<double> p;
  long reps = 0;
  std::uint64_t seed = 0;
  double fwer = 0.0, fwer_se = 0.0;
  double fwp = 0.0, fwp_se = 0.0;
  double ess = 0.0, ess_se = 0.0;
  std::vector<double> per_arm_reject, per_arm_se;
};

inline constexpr long kDefaultSimulationReps = 100000;

/// Replays the decision rules on pseudo-random data. Replicates are cut into
/// fixed chunks, each seeded from (seed, chunk index), so the result does not
/// depend on the worker count. Throws validation_error when reps < 10^4.
SimulationReport simulate(const Design& d, std::span<const double> p, long reps, std::uint64_t seed,
                          unsigned threads = 1);

/// CSV with header p,fwer,fwp,ess_null,ess_alt over p = 0, step, ..., 1.
/// The alternative columns are left empty beyond 1 - max delta.
void write_curves(const Evaluator& ev, std::span<const double> delta, double step, std::ostream& out,
                  FisherEss convention = FisherEss::exact);

}  // namespace twostage
