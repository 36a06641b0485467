#include "twostage/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "twostage/errors.hpp"
#include "twostage/outcome_space.hpp"

namespace twostage {

namespace {

bool near_integer(double v, double tol = 1e-9) { return std::fabs(v - std::round(v)) < tol; }

std::vector<double> broadcast(const nlohmann::json& j, std::size_t len, bool zero_first,
                              const char* name) {
  std::vector<double> out;
  if (j.is_number()) {
    out.assign(len, j.get<double>());
    if (zero_first) out[0] = 0.0;
    return out;
  }
  if (!j.is_array()) throw validation_error(std::string(name) + " must be a number or an array");
  out = j.get<std::vector<double>>();
  // A per-arm delta may omit the leading control entry.
  if (zero_first && out.size() + 1 == len) out.insert(out.begin(), 0.0);
  if (out.size() != len)
    throw validation_error(std::string(name) + " has length " + std::to_string(out.size()) +
                           ", expected " + std::to_string(len));
  return out;
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.start = j.at("start").get<double>();
  g.stop = j.at("stop").get<double>();
  g.step = j.at("step").get<double>();
  return g;
}

nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"start", g.start}, {"stop", g.stop}, {"step", g.step}};
}

}  // namespace

bool AllocationRatios::integral_for(int n) const {
  const double v[3] = {rC2 * n, rE1 * n, rE2 * n};
  for (double x : v)
    if (!near_integer(x) || std::round(x) < 1) return false;
  return true;
}

void AllocationRatios::validate() const {
  if (!(rC2 >= 1.0)) throw validation_error("r_C2 must be at least r_C1 = 1");
  if (!(rE1 > 0.0)) throw validation_error("r_E1 must be positive");
  if (!(rE2 >= rE1)) throw validation_error("r_E2 must be at least r_E1");
}

StageSizes StageSizes::from(int n, const AllocationRatios& r) {
  if (!r.integral_for(n))
    throw validation_error("allocation ratios are not integral for n = " + std::to_string(n));
  StageSizes s;
  s.control1 = n;
  s.arm1 = static_cast<int>(std::lround(r.rE1 * n));
  s.control2 = static_cast<int>(std::lround(r.rC2 * n)) - n;
  s.arm2 = static_cast<int>(std::lround(r.rE2 * n)) - s.arm1;
  return s;
}

std::string to_string(Control c) { return c == Control::weak ? "weak" : "strong"; }

std::string to_string(FisherEss e) { return e == FisherEss::exact ? "exact" : "null_conditional"; }

FisherEss fisher_ess_from_string(const std::string& s) {
  if (s == "exact") return FisherEss::exact;
  if (s == "null_conditional") return FisherEss::null_conditional;
  throw validation_error("fisher_ess must be \"exact\" or \"null_conditional\", got \"" + s + "\"");
}

Control control_from_string(const std::string& s) {
  if (s == "weak") return Control::weak;
  if (s == "strong") return Control::strong;
  throw validation_error("control must be \"weak\" or \"strong\", got \"" + s + "\"");
}

void Weights::validate() const {
  if (w1 < 0 || w2 < 0 || w3 < 0) throw validation_error("weights must be nonnegative");
  if (!(w1 + w2 > 0)) throw validation_error("weights need w1 + w2 > 0, got " + to_string());
}

std::string Weights::to_string() const {
  std::ostringstream os;
  os << "(" << w1 << "," << w2 << "," << w3 << ")";
  return os.str();
}

std::vector<double> linear_grid(double lo, double hi, double step) {
  if (!(step > 0)) throw validation_error("grid step must be positive");
  if (hi < lo) return {};
  const long count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    // Round to 12 decimals so that 0.07 prints and compares as 0.07.
    const double v = lo + static_cast<double>(i) * step;
    out.push_back(std::round(v * 1e12) / 1e12);
  }
  return out;
}

std::vector<double> GridSpec::values() const { return linear_grid(start, stop, step); }

double TrialConfig::max_delta() const {
  double m = 0.0;
  for (std::size_t k = 1; k < delta.size(); ++k) m = std::max(m, delta[k]);
  return m;
}

void TrialConfig::validate() const {
  if (K < 1 || K > kMaxArms) throw validation_error("K must lie in 1..4");
  if (!(alpha > 0 && alpha < 1)) throw validation_error("alpha must lie in (0,1)");
  if (!(beta > 0 && beta < 1)) throw validation_error("beta must lie in (0,1)");
  if (delta.size() != static_cast<std::size_t>(K) + 1)
    throw validation_error("delta must have K + 1 entries");
  if (delta[0] != 0.0) throw validation_error("delta_0 must be 0");
  for (int k = 1; k <= K; ++k)
    if (!(delta[k] > 0 && delta[k] < 1)) throw validation_error("each delta_k must lie in (0,1)");
  if (p_ess.size() != static_cast<std::size_t>(K) + 1)
    throw validation_error("p_ess must have K + 1 entries");
  for (double p : p_ess)
    if (!(p >= 0 && p <= 1)) throw validation_error("p_ess entries must lie in [0,1]");
  for (int k = 0; k <= K; ++k)
    if (p_ess[k] + delta[k] > 1.0 + 1e-12) throw validation_error("p_ess + delta exceeds 1");
  ratios.validate();
  for (const auto& w : weights) w.validate();
  if (n_min < 0) throw validation_error("n_min must be nonnegative");
  if (n_max) {
    if (*n_max <= n_min) throw validation_error("n_max must exceed n_min");
    bool any = false;
    for (int n = n_min + 1; n <= *n_max && !any; ++n) any = ratios.integral_for(n);
    if (!any)
      throw validation_error("allocation ratios are not integral for any n in (n_min, n_max]");
  } else {
    bool any = false;
    for (int n = n_min + 1; n <= n_min + 1000 && !any; ++n) any = ratios.integral_for(n);
    if (!any) throw validation_error("allocation ratios are never integral");
  }
  if (!(p_grid_step > 0 && p_grid_step <= 0.05))
    throw validation_error("p_grid_step must lie in (0, 0.05]");
  for (double a : alpha1_grid.values())
    if (!(a > 0 && a < alpha)) throw validation_error("alpha1 grid must lie inside (0, alpha)");
  for (double b : beta1_grid.values())
    if (!(b > 0 && b < beta)) throw validation_error("beta1 grid must lie inside (0, beta)");
}

TrialConfig TrialConfig::example(int K) {
  TrialConfig c;
  c.K = K;
  c.delta.assign(K + 1, 0.15);
  c.delta[0] = 0.0;
  c.p_ess.assign(K + 1, 0.7);
  c.weights = {{1, 0, 0}, {0, 1, 0}, {1e-5, 0, 1}, {1, 1, 0},
               {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  return c;
}

TrialConfig config_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw validation_error("config must be a JSON object");
    const int version = j.value("schema_version", kConfigSchemaVersion);
    if (version != kConfigSchemaVersion)
      throw validation_error("unsupported config schema_version " + std::to_string(version));
    const int K = j.value("K", 2);
    if (K < 1 || K > kMaxArms) throw validation_error("K must lie in 1..4");
    TrialConfig c = TrialConfig::example(K);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    if (j.contains("delta")) c.delta = broadcast(j["delta"], K + 1, true, "delta");
    if (j.contains("p_ess")) c.p_ess = broadcast(j["p_ess"], K + 1, false, "p_ess");
    if (j.contains("ratios")) c.ratios = ratios_from_json(j["ratios"]);
    if (j.contains("weights")) {
      c.weights.clear();
      for (const auto& w : j["weights"]) {
        const auto v = w.get<std::vector<double>>();
        if (v.size() != 3) throw validation_error("each weight vector needs three entries");
        c.weights.push_back({v[0], v[1], v[2]});
      }
    }
    if (j.contains("control")) c.control = control_from_string(j["control"].get<std::string>());
    c.n_min = j.value("n_min", c.n_min);
    if (j.contains("n_max") && !j["n_max"].is_null()) c.n_max = j["n_max"].get<int>();
    if (j.contains("fisher_grid")) {
      const auto& g = j["fisher_grid"];
      if (g.contains("alpha1")) c.alpha1_grid = grid_from_json(g["alpha1"]);
      if (g.contains("beta1")) c.beta1_grid = grid_from_json(g["beta1"]);
    }
    c.p_grid_step = j.value("p_grid_step", c.p_grid_step);
    c.refine = j.value("refine", c.refine);
    c.seed = j.value("seed", c.seed);
    if (j.contains("fisher_ess")) c.fisher_ess = fisher_ess_from_string(j["fisher_ess"].get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("malformed config: ") + e.what());
  }
}

nlohmann::json ratios_to_json(const AllocationRatios& r) {
  return {{"rC2", r.rC2}, {"rE1", r.rE1}, {"rE2", r.rE2}};
}

AllocationRatios ratios_from_json(const nlohmann::json& j) {
  AllocationRatios r;
  r.rC2 = j.value("rC2", r.rC2);
  r.rE1 = j.value("rE1", r.rE1);
  r.rE2 = j.value("rE2", r.rE2);
  if (j.contains("rC1") && j["rC1"].get<double>() != 1.0)
    throw validation_error("r_C1 is fixed at 1");
  return r;
}

nlohmann::json config_to_json(const TrialConfig& c) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& x : c.weights) w.push_back({x.w1, x.w2, x.w3});
  nlohmann::json j = {
      {"schema_version", kConfigSchemaVersion},
      {"K", c.K},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"delta", c.delta},
      {"p_ess", c.p_ess},
      {"ratios", ratios_to_json(c.ratios)},
      {"weights", w},
      {"control", to_string(c.control)},
      {"n_min", c.n_min},
      {"fisher_grid", {{"alpha1", grid_to_json(c.alpha1_grid)}, {"beta1", grid_to_json(c.beta1_grid)}}},
      {"p_grid_step", c.p_grid_step},
      {"refine", c.refine},
      {"seed", c.seed},
      {"fisher_ess", to_string(c.fisher_ess)},
  };
  j["n_max"] = c.n_max ? nlohmann::json(*c.n_max) : nlohmann::json(nullptr);
  return j;
}

TrialConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const TrialConfig& cfg) {
  const std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace twostage
