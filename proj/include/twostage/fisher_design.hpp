#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "twostage/binomial_design.hpp"
#include "twostage/conditional.hpp"
#include "twostage/config.hpp"
#include "twostage/outcome_space.hpp"

namespace twostage {

/// Everything boundary determination depends on besides (n, alpha1, beta1).
struct FisherSpec {
  int K = 2;
  double alpha = 0.15;
  std::vector<double> delta;  // length K + 1, delta[0] == 0
  AllocationRatios ratios;
  Control control = Control::weak;
  double p_grid_step = 0.01;
  bool refine = true;

  static FisherSpec from(const TrialConfig& cfg);
  double max_delta() const;
  void validate() const;
};

/// z1-independent stage-one boundaries fixed in advance instead of being
/// derived from (alpha1, beta1).
struct ImposedStageOne {
  int f1 = -1;
  int e1 = 1;
  friend bool operator==(const ImposedStageOne&, const ImposedStageOne&) = default;
};

struct FisherBoundaries {
  int f1 = 0;
  std::vector<int> e1;                            // z1 = 0..stage_one_total
  std::vector<std::vector<std::vector<int>>> e2;  // [m - 1][z1][z2]

  int e1_at(int z1) const { return e1.at(z1); }
  int e2_at(int m, int z2, int z1) const { return e2.at(m - 1).at(z1).at(z2); }
  int f2_at(int m, int z2, int z1) const { return e2_at(m, z2, z1) - 1; }

  /// Shape and e1 > f1 + 1 checks; throws validation_error.
  void validate(int K, const StageSizes& s) const;
  friend bool operator==(const FisherBoundaries&, const FisherBoundaries&) = default;
};

struct FisherDesign {
  FisherSpec spec;
  int n = 0;
  double alpha1 = 0.0;
  double beta1 = 0.0;
  std::optional<ImposedStageOne> imposed;
  FisherBoundaries boundaries;

  int K() const { return spec.K; }
  StageSizes sizes() const { return StageSizes::from(n, spec.ratios); }
  int max_sample_size() const { return sizes().max_total(spec.K); }
};

/// All stage-one count vectors (x_0, ..., x_K), x_0 varying fastest.
struct StageOneLattice {
  int K = 0;
  StageSizes sizes;
  std::vector<std::array<std::int16_t, kMaxArms + 1>> x;
  std::vector<std::int32_t> z1;

  static StageOneLattice build(int K, const StageSizes& sizes);
  std::size_t size() const { return x.size(); }
  /// T_k1 for 0-based arm k.
  int t(std::size_t i, int k) const { return x[i][k + 1] - x[i][0]; }
};

/// A stage-one configuration after which the arms in S continue, keyed by
/// what the second stage depends on.
struct StageOneKey {
  int z1 = 0;
  std::uint32_t S = 0;
  int m = 0;
  std::array<int, kMaxArms> t{};  // T_k1 for arms in S, 0 elsewhere
};

/// Classification of every lattice point under fixed (f1, e1).
class FisherPlan {
 public:
  FisherPlan(const StageOneLattice& lattice, int f1, std::span<const int> e1);

  const StageOneLattice& lattice() const { return *lattice_; }
  const std::vector<StageOneKey>& keys() const { return keys_; }

  struct Mass {
    std::vector<double> stop;  // by rejected mask; entry 0 is the futility stop
    std::vector<double> key;   // by key index
  };
  /// Aggregates per-lattice-point weights.
  Mass accumulate(std::span<const double> weights) const;

 private:
  const StageOneLattice* lattice_;
  std::vector<std::int32_t> cls_;  // >= 0: key index; < 0: -1 - rejected mask
  std::vector<StageOneKey> keys_;
};

/// Unconditional stage probabilities at one p, with stage-two tables built
/// on demand. Safe to share between threads.
class FisherPoint {
 public:
  FisherPoint(const StageOneLattice& lattice, std::span<const double> p);

  const std::vector<double>& p() const { return p_; }
  const std::vector<double>& stage_one() const { return prob_; }
  /// Table whose capped arms are those in `capped` (ascending arm order) and
  /// whose free arms are those in `free`.
  const StageTwoTable& table(std::uint32_t capped, std::uint32_t free) const;

 private:
  int K_;
  StageSizes sizes_;
  std::vector<double> p_;
  std::vector<double> prob_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<double>, std::unique_ptr<StageTwoTable>> tables_;
  mutable std::array<std::atomic<const StageTwoTable*>, 256> by_mask_{};
};

/// P(no arm in `capped` rejected) under the point's p.
double fisher_no_rejection(const FisherPlan& plan, const FisherBoundaries& b, const FisherPoint& pt,
                           std::uint32_t capped);
/// Same, reusing stage-one masses already accumulated for pt.
double fisher_no_rejection(const FisherPlan& plan, const FisherPlan::Mass& mass,
                           const FisherBoundaries& b, const FisherPoint& pt, std::uint32_t capped);
double fisher_ess(const FisherPlan& plan, const FisherPoint& pt);
/// ESS under the given convention; see FisherEss.
double fisher_ess(const FisherPlan& plan, const FisherPoint& pt, FisherEss convention);
/// Outcome probabilities in canonical enumerate_outcomes(K) order.
std::vector<double> fisher_outcome_distribution(const FisherPlan& plan, const FisherBoundaries& b,
                                                const FisherPoint& pt);

/// Caches the n-specific pieces of boundary determination: the lattice, the
/// conditional stage-one weights, the alpha_I1 curves, the beta curve and the
/// null stage-two tables.
class FisherContext {
 public:
  FisherContext(const FisherSpec& spec, int n);

  const FisherSpec& spec() const { return spec_; }
  int n() const { return n_; }
  const StageSizes& sizes() const { return sizes_; }
  const StageOneLattice& lattice() const { return lattice_; }
  /// Odds-ratio vectors the stage-wise error is maximized over.
  const std::vector<std::vector<double>>& theta_set() const { return thetas_; }

  std::vector<int> e1_for(double alpha1) const;
  int f1_for(double beta1) const;
  /// max over the theta set of alpha_I1(z1 | e1[z1], theta), per z1.
  std::vector<double> alpha1_spent(std::span<const int> e1) const;
  std::vector<std::vector<std::vector<int>>> e2_for(int f1, std::span<const int> e1,
                                                    std::span<const double> spent) const;
  /// max over p of P(T_11 <= f | (p,...,p) + delta) for f = -r_C1 n - 1 ..
  /// r_E1 n, offset by r_C1 n + 1.
  const std::vector<double>& beta_curve() const;

  /// f1 and e1 only; e2 is left empty. Distinct (alpha1, beta1) pairs often
  /// share these, and the second stage depends on nothing else.
  FisherBoundaries stage_one(double alpha1, double beta1) const;
  FisherDesign complete(double alpha1, double beta1, FisherBoundaries stage_one) const;
  FisherDesign build(double alpha1, double beta1) const;
  FisherDesign build_imposed(const ImposedStageOne& imposed) const;

 private:
  struct ThetaData {
    std::vector<double> theta;
    std::uint32_t nulls = 0;
    std::vector<double> weights;             // f(x_1 | z1, 1, theta) per lattice point
    std::vector<std::vector<double>> curve;  // [z1][e - e_lo]: alpha_I1(z1 | e, theta)
  };
  ThetaData make_theta(const std::vector<double>& theta) const;
  int e_lo() const { return -sizes_.control1; }
  int e_hi() const { return sizes_.arm1 + 1; }
  std::vector<std::vector<std::vector<int>>> e2_for_theta(const ThetaData& td, const FisherPlan& plan,
                                                          std::span<const double> spent) const;

  FisherSpec spec_;
  int n_;
  StageSizes sizes_;
  StageOneLattice lattice_;
  std::vector<std::vector<double>> thetas_;
  std::vector<ThetaData> theta_data_;
  mutable std::once_flag beta_once_;
  mutable std::vector<double> beta_curve_;
};

/// alpha_I1(z1 | e, theta): P(some true-null arm has T_k1 >= e | z1).
double alpha_I1(const FisherSpec& spec, int n, int z1, int e1z1, std::span<const double> theta);
/// beta_II1(z1 | f1, theta): P(T_11 <= f1 | z1).
double beta_II1(const FisherSpec& spec, int n, int z1, int f1, std::span<const double> theta);
/// alpha_I2(m, z2, z1 | e2, f1, e1, theta): joint conditional probability that
/// exactly m arms continue, none was rejected at stage one and some
/// continuing true-null arm reaches e2.
double alpha_I2(const FisherSpec& spec, int n, int m, int z2, int z1, int e2, int f1,
                std::span<const int> e1, std::span<const double> theta);

std::vector<int> determine_e1(const FisherSpec& spec, int n, double alpha1);
int determine_f1(const FisherSpec& spec, int n, double beta1);
std::vector<std::vector<std::vector<int>>> determine_e2(const FisherSpec& spec, int n, int f1,
                                                        std::span<const int> e1,
                                                        std::span<const double> alpha1_spent);

Band band_F1(int k, int z1, const OutcomePair& o, const FisherBoundaries& b);
Band band_F2(int k, int z1, int z2, const StagePresence& rho2, const OutcomePair& o,
             const FisherBoundaries& b);

double outcome_prob_fisher(const FisherDesign& d, std::span<const double> p, const OutcomePair& o);
std::vector<double> outcome_distribution_fisher(const FisherDesign& d, std::span<const double> p);

double fisher_fwer(const FisherDesign& d, std::span<const double> p);
double fisher_fwp(const FisherDesign& d, std::span<const double> p);
double fisher_ess(const FisherDesign& d, std::span<const double> p,
                  FisherEss convention = FisherEss::exact);

/// min over p in [0, 1 - max delta] of FWP((p,...,p) + delta), grid plus
/// golden-section refinement.
struct PowerCheck {
  double p = 0.0;
  double fwp = 0.0;
};
PowerCheck fisher_min_fwp(const FisherDesign& d);

/// Smallest ratio-feasible n in (n_min, n_max] meeting the power requirement.
/// Throws infeasible_error when none does.
FisherDesign find_min_n(const TrialConfig& cfg, double alpha1, double beta1);
FisherDesign find_min_n_imposed(const TrialConfig& cfg,
                                const std::function<ImposedStageOne(int n)>& rule);

/// f1 = -1 and e1 = ceil(n delta_1) + 1 for every z1.
ImposedStageOne baseline_stage_one_rule(int n, double delta1);

/// Executes the stage-wise decision rules on observed data.
OutcomePair conduct_fisher(const FisherDesign& d, const TrialData& data);

/// Largest n the Fisher n-search tries when the config sets no n_max.
inline constexpr int kDefaultFisherNMax = 200;

}  // namespace twostage
