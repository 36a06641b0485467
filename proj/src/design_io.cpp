#include "twostage/design_io.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "twostage/errors.hpp"

namespace twostage {

namespace {

using nlohmann::json;

json fisher_to_json(const FisherDesign& d) {
  json j;
  j["method"] = "fisher";
  j["K"] = d.K();
  j["n"] = d.n;
  j["alpha"] = d.spec.alpha;
  j["delta"] = d.spec.delta;
  j["ratios"] = ratios_to_json(d.spec.ratios);
  j["control"] = to_string(d.spec.control);
  j["p_grid_step"] = d.spec.p_grid_step;
  j["refine"] = d.spec.refine;
  if (d.imposed) {
    j["imposed"] = {{"f1", d.imposed->f1}, {"e1", d.imposed->e1}};
  } else {
    j["alpha1"] = d.alpha1;
    j["beta1"] = d.beta1;
  }
  j["boundaries"] = {{"f1", d.boundaries.f1}, {"e1", d.boundaries.e1}, {"e2", d.boundaries.e2}};
  return j;
}

json binomial_to_json(const BinomialDesign& d) {
  return {{"method", "binomial"}, {"K", d.K},
          {"n", d.n},             {"f", {d.f1, d.f2}},
          {"e", {d.e1, d.e2}},    {"ratios", ratios_to_json(d.ratios)}};
}

BinomialDesign binomial_from_json(const json& j) {
  BinomialDesign d;
  d.K = j.at("K").get<int>();
  d.n = j.at("n").get<int>();
  const auto f = j.at("f").get<std::vector<int>>();
  const auto e = j.at("e").get<std::vector<int>>();
  if (f.size() != 2 || e.size() != 2) throw validation_error("f and e need two entries each");
  d.f1 = f[0];
  d.f2 = f[1];
  d.e1 = e[0];
  d.e2 = e[1];
  if (j.contains("ratios")) d.ratios = ratios_from_json(j["ratios"]);
  return d;
}

FisherDesign fisher_from_json(const json& j) {
  FisherDesign d;
  d.spec.K = j.at("K").get<int>();
  d.n = j.at("n").get<int>();
  d.spec.alpha = j.at("alpha").get<double>();
  d.spec.delta = j.at("delta").get<std::vector<double>>();
  if (j.contains("ratios")) d.spec.ratios = ratios_from_json(j["ratios"]);
  d.spec.control = control_from_string(j.value("control", std::string("weak")));
  d.spec.p_grid_step = j.value("p_grid_step", d.spec.p_grid_step);
  d.spec.refine = j.value("refine", d.spec.refine);
  if (j.contains("imposed")) {
    d.imposed = ImposedStageOne{j["imposed"].at("f1").get<int>(), j["imposed"].at("e1").get<int>()};
  } else {
    d.alpha1 = j.at("alpha1").get<double>();
    d.beta1 = j.at("beta1").get<double>();
  }
  const auto& b = j.at("boundaries");
  d.boundaries.f1 = b.at("f1").get<int>();
  d.boundaries.e1 = b.at("e1").get<std::vector<int>>();
  d.boundaries.e2 = b.at("e2").get<std::vector<std::vector<std::vector<int>>>>();
  return d;
}

void revalidate_fisher(const FisherDesign& d) {
  d.spec.validate();
  if (d.n < 1 || !d.spec.ratios.integral_for(d.n)) throw validation_error("ratios not integral for n");
  d.boundaries.validate(d.K(), d.sizes());
  const FisherContext ctx(d.spec, d.n);
  const FisherDesign fresh = d.imposed ? ctx.build_imposed(*d.imposed) : ctx.build(d.alpha1, d.beta1);
  const auto& a = d.boundaries;
  const auto& b = fresh.boundaries;
  if (a.f1 != b.f1) throw validation_error("boundary revalidation failed: f1 differs from recomputation");
  if (a.e1 != b.e1) throw validation_error("boundary revalidation failed: e1 differs from recomputation");
  if (a.e2 != b.e2) throw validation_error("boundary revalidation failed: e2 differs from recomputation");
}

}  // namespace

json design_to_json(const Design& d) {
  if (const auto* b = std::get_if<BinomialDesign>(&d)) return binomial_to_json(*b);
  return fisher_to_json(std::get<FisherDesign>(d));
}

Design design_from_json(const json& in, bool revalidate) {
  const json& j = in.contains("design") ? in["design"] : in;
  try {
    const auto method = j.at("method").get<std::string>();
    if (method == "binomial") {
      auto d = binomial_from_json(j);
      if (revalidate) d.validate();
      return d;
    }
    if (method == "fisher") {
      auto d = fisher_from_json(j);
      if (revalidate) revalidate_fisher(d);
      return d;
    }
    throw validation_error("unknown design method '" + method + "'");
  } catch (const json::exception& e) {
    throw validation_error(std::string("malformed design: ") + e.what());
  }
}

Design load_design(const std::string& path, bool revalidate) {
  return design_from_json(read_json(path), revalidate);
}

json oc_to_json(const OCReport& r) {
  return {{"p", r.p}, {"fwer", r.fwer}, {"fwp", r.fwp}, {"ess", r.ess}, {"per_arm_reject", r.per_arm_reject}};
}

json max_fwer_to_json(const MaxFwerResult& r, bool with_trace) {
  json j = {{"argmax_p", r.argmax_p},
            {"max_fwer", r.max_fwer},
            {"distance_to_diagonal", r.distance_to_diagonal()},
            {"evaluations", r.search_trace.size()}};
  if (with_trace) {
    json t = json::array();
    for (const auto& [p, v] : r.search_trace) t.push_back({{"p", p}, {"fwer", v}});
    j["search_trace"] = std::move(t);
  }
  return j;
}

json simulation_to_json(const SimulationReport& r) {
  return {{"p", r.p},
          {"reps", r.reps},
          {"seed", r.seed},
          {"fwer", r.fwer},
          {"fwer_se", r.fwer_se},
          {"fwp", r.fwp},
          {"fwp_se", r.fwp_se},
          {"ess", r.ess},
          {"ess_se", r.ess_se},
          {"per_arm_reject", r.per_arm_reject},
          {"per_arm_se", r.per_arm_se}};
}

json design_report(const Design& d, const TrialConfig& cfg) {
  const Evaluator ev(d);
  std::vector<double> alt(cfg.p_ess.size());
  for (std::size_t k = 0; k < alt.size(); ++k) alt[k] = std::min(1.0, cfg.p_ess[k] + cfg.delta[k]);

  json j;
  j["method"] = design_method(d);
  j["design"] = design_to_json(d);
  j["max_sample_size"] = design_max_sample_size(d);
  j["oc"] = {{"p_ess", oc_to_json(oc_at(d, cfg.p_ess))}, {"p_ess_plus_delta", oc_to_json(oc_at(d, alt))}};
  if (std::holds_alternative<FisherDesign>(d)) {
    j["objective_ess"] = {{"convention", to_string(cfg.fisher_ess)},
                          {"p_ess", ev.ess(cfg.p_ess, cfg.fisher_ess)},
                          {"p_ess_plus_delta", ev.ess(alt, cfg.fisher_ess)}};
  }
  const auto fwer = max_fwer_common_p(ev, cfg.p_grid_step, cfg.refine);
  const auto power = min_fwp(ev, cfg.delta, cfg.p_grid_step, cfg.refine);
  j["constraints"] = {{"alpha", cfg.alpha},
                      {"max_fwer_common_p", fwer.max_fwer},
                      {"argmax_fwer_p", fwer.argmax_p[0]},
                      {"fwer_ok", fwer.max_fwer <= cfg.alpha + 1e-12},
                      {"power_target", 1.0 - cfg.beta},
                      {"min_fwp", power.fwp},
                      {"argmin_fwp_p", power.p},
                      {"power_ok", power.fwp >= 1.0 - cfg.beta - 1e-12}};
  j["provenance"] = {{"config_hash", config_hash(cfg)}, {"version", kVersion}, {"timestamp", utc_timestamp()}};
  return j;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw validation_error(path + " is not valid JSON: " + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace twostage
