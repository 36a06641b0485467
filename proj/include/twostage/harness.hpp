#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostage/oc_eval.hpp"

namespace twostage {

/// A design small enough for the literal nested sums:
/// (r_C1 + K r_E1) n <= 6.
struct OracleCase {
  std::string label;
  Design design;
  std::vector<double> p;
};

inline constexpr int kOracleStageOneLimit = 6;

/// Literal evaluation of the outcome-probability sum over every stage-one
/// and stage-two count vector, with its own binomial PMF and no
/// factorization. Throws validation_error beyond the oracle scale.
double brute_force_outcome_prob(const Design& d, std::span<const double> p, const OutcomePair& o);

/// Deterministic mix of binomial and Fisher cases for K in {1, 2}: designs
/// from the design space, boundaries derived from (alpha1, beta1), and
/// arbitrary Fisher boundary maps, under p vectors that include 0, 1 and
/// tied entries.
std::vector<OracleCase> oracle_cases(std::uint64_t seed, int per_method = 120);

struct OracleComparison {
  std::size_t cases = 0;
  std::size_t outcomes = 0;
  double max_abs_diff = 0.0;
  std::string worst_case;
};

OracleComparison compare_with_oracle(const std::vector<OracleCase>& cases, unsigned threads = 1);

struct PropertyResult {
  std::string family;
  std::string module;
  bool passed = false;
  long checks = 0;
  std::string detail;
};

struct SuiteReport {
  std::uint64_t seed = 0;
  std::vector<PropertyResult> results;
  double wall_seconds = 0.0;

  bool all_passed() const;
  nlohmann::json to_json() const;
};

/// Runs every invariant family on small randomized instances.
SuiteReport run_property_suite(std::uint64_t seed, unsigned threads = 1);

/// A K = 1 binomial design with non-positive acceptance boundaries whose
/// FWER at p = (0, 0) exceeds its FWER at p = (0.5, 0.5).
struct Counterexample {
  BinomialDesign design;
  double fwer_at_zero = 0.0;
  double fwer_at_half = 0.0;
};
Counterexample find_fwer_counterexample();

}  // namespace twostage
