#pragma once

#include <string>

#include <json.hpp>

#include "twostage/config.hpp"
#include "twostage/oc_eval.hpp"

namespace twostage {

inline constexpr const char* kVersion = "1.0.0";

nlohmann::json design_to_json(const Design& d);

/// Parses a design, or the "design" member of a report. With revalidate set,
/// binomial designs are checked against the design-space constraints and
/// Fisher boundaries are recomputed from (n, alpha1, beta1) or the imposed
/// stage-one rule; any mismatch throws validation_error.
Design design_from_json(const nlohmann::json& j, bool revalidate = true);

Design load_design(const std::string& path, bool revalidate = true);

nlohmann::json oc_to_json(const OCReport& r);
nlohmann::json max_fwer_to_json(const MaxFwerResult& r, bool with_trace);
nlohmann::json simulation_to_json(const SimulationReport& r);

/// Design, OC summary at p_ESS and p_ESS + delta, max N, constraint checks
/// and provenance. Everything except provenance.timestamp is a function of
/// (design, cfg, version).
nlohmann::json design_report(const Design& d, const TrialConfig& cfg);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// ISO-8601 UTC time of the call.
std::string utc_timestamp();

}  // namespace twostage
