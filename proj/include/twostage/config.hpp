#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace twostage {

/// Cumulative per-arm allocation multipliers of n. Stage 0 is stored
/// explicitly (r_C0 = r_E0 = 0) and r_C1 = 1 by definition.
struct AllocationRatios {
  double rC2 = 2.0;
  double rE1 = 1.0;
  double rE2 = 2.0;

  double rC(int stage) const { return stage == 0 ? 0.0 : stage == 1 ? 1.0 : rC2; }
  double rE(int stage) const { return stage == 0 ? 0.0 : stage == 1 ? rE1 : rE2; }

  /// r_C2 n, r_E1 n and r_E2 n are all positive integers.
  bool integral_for(int n) const;
  void validate() const;

  friend bool operator==(const AllocationRatios&, const AllocationRatios&) = default;
};

/// Per-stage group sizes implied by n and the ratios.
struct StageSizes {
  int control1 = 0;  // r_C1 n
  int arm1 = 0;      // r_E1 n
  int control2 = 0;  // (r_C2 - r_C1) n
  int arm2 = 0;      // (r_E2 - r_E1) n

  static StageSizes from(int n, const AllocationRatios& r);
  int control(int stage) const { return stage == 1 ? control1 : control2; }
  int arm(int stage) const { return stage == 1 ? arm1 : arm2; }
  int stage_one_total(int K) const { return control1 + K * arm1; }
  int stage_two_total(int m) const { return control2 + m * arm2; }
  int max_total(int K) const { return stage_one_total(K) + stage_two_total(K); }
};

enum class Control { weak, strong };

std::string to_string(Control c);
Control control_from_string(const std::string& s);

/// How Fisher-design ESS enters reports and the objective. `exact` is the
/// expectation under the full outcome distribution. `null_conditional` mixes
/// the stage-one conditional distribution at theta = 1 over g(z1 | p); it
/// agrees with `exact` whenever all p_k are equal.
enum class FisherEss { exact, null_conditional };

std::string to_string(FisherEss e);
FisherEss fisher_ess_from_string(const std::string& s);

struct Weights {
  double w1 = 1.0;
  double w2 = 0.0;
  double w3 = 0.0;
  void validate() const;
  std::string to_string() const;
  friend bool operator==(const Weights&, const Weights&) = default;
};

struct GridSpec {
  double start = 0.0;
  double stop = 0.0;
  double step = 0.01;
  std::vector<double> values() const;
};

/// Evenly spaced points lo, lo+step, ..., with floor((hi-lo)/step)+1 entries.
std::vector<double> linear_grid(double lo, double hi, double step);

/// Problem statement shared by both design methods.
struct TrialConfig {
  int K = 2;
  double alpha = 0.15;
  double beta = 0.2;
  std::vector<double> delta;  // length K + 1, delta[0] == 0
  std::vector<double> p_ess;  // length K + 1
  AllocationRatios ratios;
  std::vector<Weights> weights;
  Control control = Control::weak;
  int n_min = 0;
  std::optional<int> n_max;
  GridSpec alpha1_grid{0.01, 0.14, 0.01};
  GridSpec beta1_grid{0.01, 0.19, 0.01};
  double p_grid_step = 0.01;
  bool refine = true;
  std::uint64_t seed = 20170101;
  FisherEss fisher_ess = FisherEss::exact;

  double max_delta() const;
  void validate() const;

  /// Two-arm-per-comparison oncology example: alpha 0.15, beta 0.2,
  /// delta 0.15, p_ess 0.7, ratios (2, 1, 2) and seven weight vectors.
  static TrialConfig example(int K);
};

inline constexpr int kConfigSchemaVersion = 1;

TrialConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrialConfig& cfg);
TrialConfig load_config(const std::string& path);

/// FNV-1a hash of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const TrialConfig& cfg);

nlohmann::json ratios_to_json(const AllocationRatios& r);
AllocationRatios ratios_from_json(const nlohmann::json& j);

}  // namespace twostage
