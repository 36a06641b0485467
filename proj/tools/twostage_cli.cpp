#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "twostage/design_io.hpp"
#include "twostage/errors.hpp"
#include "twostage/harness.hpp"
#include "twostage/optimizer.hpp"
#include "twostage/search.hpp"

using namespace twostage;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  int example_K = 0;
  std::string out;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
  std::string format = "table";
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) {
    sub->add_option("--config", c.config, "Run configuration (JSON)");
    sub->add_option("--example", c.example_K, "Use the built-in oncology example with K arms")
        ->check(CLI::Range(1, kMaxArms));
  }
  sub->add_option("--out", c.out, "Output file (default: stdout)");
  sub->add_option("--threads", c.threads, "Worker threads, 0 for hardware parallelism");
  sub->add_option("--seed", c.seed, "Seed overriding the configuration");
  sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "csv", "table"}));
}

std::optional<TrialConfig> maybe_config(const Common& c) {
  if (!c.config.empty()) {
    if (c.example_K) throw validation_error("--config and --example are mutually exclusive");
    return load_config(c.config);
  }
  if (c.example_K) return TrialConfig::example(c.example_K);
  return std::nullopt;
}

TrialConfig require_config(const Common& c) {
  auto cfg = maybe_config(c);
  if (!cfg) throw validation_error("a run configuration is required (--config FILE or --example K)");
  if (c.seed) cfg->seed = *c.seed;
  cfg->validate();
  return *cfg;
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out);
  if (!f) throw validation_error("cannot write " + c.out);
  f << text;
}

std::vector<double> expand_p(const std::vector<double>& p, int K) {
  if (p.size() == 1) return std::vector<double>(K + 1, p[0]);
  if (static_cast<int>(p.size()) != K + 1)
    throw validation_error("--p needs 1 or K + 1 = " + std::to_string(K + 1) + " values");
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw validation_error("--p entries must lie in [0, 1]");
  return p;
}

std::string join(const std::vector<double>& v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << '(';
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  s << ')';
  return s.str();
}

std::string oc_csv(const OCReport& r) {
  std::ostringstream s;
  s << std::setprecision(12) << "p,fwer,fwp,ess";
  for (std::size_t k = 1; k <= r.per_arm_reject.size(); ++k) s << ",reject_" << k;
  s << '\n' << '"' << join(r.p, 6) << '"' << ',' << r.fwer << ',' << r.fwp << ',' << r.ess;
  for (double v : r.per_arm_reject) s << ',' << v;
  s << '\n';
  return s.str();
}

std::string oc_table(const std::string& title, const OCReport& r) {
  std::ostringstream s;
  s << title << " at p = " << join(r.p) << '\n' << std::fixed << std::setprecision(6);
  s << "  FWER  " << r.fwer << "\n  FWP   " << r.fwp << "\n  ESS   " << std::setprecision(4) << r.ess << '\n';
  for (std::size_t k = 0; k < r.per_arm_reject.size(); ++k)
    s << "  P(reject H0" << k + 1 << ") " << std::setprecision(6) << r.per_arm_reject[k] << '\n';
  return s.str();
}

int run_design(const std::string& method, const Common& c, std::size_t weight_index) {
  const TrialConfig cfg = require_config(c);
  const unsigned threads = resolve_threads(c.threads);
  const OptimizationRun run = method == "binomial" ? optimize_binomial(cfg, threads) : optimize_fisher(cfg, threads);
  if (weight_index >= run.results.size()) throw validation_error("--weight index out of range");

  json report = design_report(run.results[weight_index].best().design, cfg);
  report["selected_weights"] = run.results[weight_index].weights.to_string();
  report["optimization"] = run_to_json(run, cfg);
  const std::string table = run_summary_table(run);

  if (c.format == "json") {
    emit(c, report.dump(2) + "\n");
  } else {
    if (!c.out.empty()) write_json(c.out, report);
    std::cout << table;
    std::cout << "candidates evaluated: " << run.candidates_evaluated << ", wall time " << std::fixed
              << std::setprecision(1) << run.wall_seconds << " s\n";
  }
  return 0;
}

int run_evaluate(const std::string& path, const std::vector<double>& p_in, const std::string& ess_conv,
                 const Common& c) {
  const Design d = load_design(path, true);
  const auto p = expand_p(p_in, design_K(d));
  const OCReport r = oc_at(d, p);
  json j = oc_to_json(r);
  if (std::holds_alternative<FisherDesign>(d) && ess_conv != "exact")
    j["ess_" + ess_conv] = Evaluator(d).ess(p, fisher_ess_from_string(ess_conv));
  if (c.format == "json") {
    emit(c, j.dump(2) + "\n");
  } else if (c.format == "csv") {
    emit(c, oc_csv(r));
  } else {
    std::string t = oc_table(std::string(design_method(d)) + " design", r);
    if (j.contains("ess_" + ess_conv)) {
      std::ostringstream s;
      s << "  ESS (" << ess_conv << ") " << std::fixed << std::setprecision(4) << j["ess_" + ess_conv].get<double>()
        << '\n';
      t += s.str();
    }
    emit(c, t);
  }
  return 0;
}

int run_curves(const std::string& path, double step, std::vector<double> delta, const std::string& ess_conv,
               const Common& c) {
  const Design d = load_design(path, true);
  const int K = design_K(d);
  if (delta.empty()) {
    if (auto cfg = maybe_config(c)) {
      delta = cfg->delta;
    } else if (const auto* f = std::get_if<FisherDesign>(&d)) {
      delta = f->spec.delta;
    } else {
      throw validation_error("curves needs --delta or a configuration for binomial designs");
    }
  } else if (delta.size() == 1) {
    const double v = delta[0];
    delta.assign(K + 1, v);
    delta[0] = 0.0;
  }
  if (static_cast<int>(delta.size()) != K + 1) throw validation_error("delta needs K + 1 entries");
  if (!(step > 0.0 && step <= 0.05)) throw validation_error("--step must lie in (0, 0.05]");
  const Evaluator ev(d);
  std::ostringstream s;
  write_curves(ev, delta, step, s, fisher_ess_from_string(ess_conv));
  emit(c, s.str());
  return 0;
}

int run_verify(const std::string& path, int budget, double alpha_in, bool trace, const Common& c) {
  const Design d = load_design(path, true);
  double alpha = alpha_in;
  if (alpha <= 0.0) {
    if (auto cfg = maybe_config(c))
      alpha = cfg->alpha;
    else if (const auto* f = std::get_if<FisherDesign>(&d))
      alpha = f->spec.alpha;
    else
      alpha = TrialConfig::example(design_K(d)).alpha;
  }
  FullSearchOptions opt;
  opt.budget = budget;
  if (c.seed) opt.seed = *c.seed;
  const MaxFwerResult r = max_fwer_full(d, opt);
  const bool pass = r.max_fwer <= alpha + 1e-12;

  json j = max_fwer_to_json(r, trace);
  j["alpha"] = alpha;
  j["budget"] = budget;
  j["seed"] = opt.seed;
  j["pass"] = pass;
  if (c.format == "json") {
    emit(c, j.dump(2) + "\n");
  } else {
    if (!c.out.empty()) write_json(c.out, j);
    std::cout << std::fixed << std::setprecision(6) << "max FWER " << r.max_fwer << " at p = " << join(r.argmax_p)
              << "\ndistance to diagonal " << r.distance_to_diagonal() << "\nevaluations "
              << r.search_trace.size() << "\n"
              << (pass ? "PASS" : "FAIL") << " against alpha = " << std::setprecision(4) << alpha << '\n';
  }
  return 0;
}

int run_simulate(const std::string& path, const std::vector<double>& p_in, long reps, const Common& c) {
  const Design d = load_design(path, true);
  const auto p = expand_p(p_in, design_K(d));
  const std::uint64_t seed = c.seed.value_or(TrialConfig{}.seed);
  const SimulationReport sim = simulate(d, p, reps, seed, resolve_threads(c.threads));
  const OCReport exact = oc_at(d, p);
  json j = simulation_to_json(sim);
  j["exact"] = oc_to_json(exact);
  auto z = [](double a, double b, double se) { return se > 0 ? (a - b) / se : (a == b ? 0.0 : INFINITY); };
  j["z_scores"] = {{"fwer", z(sim.fwer, exact.fwer, sim.fwer_se)},
                   {"fwp", z(sim.fwp, exact.fwp, sim.fwp_se)},
                   {"ess", z(sim.ess, exact.ess, sim.ess_se)}};
  if (c.format == "json") {
    emit(c, j.dump(2) + "\n");
  } else {
    if (!c.out.empty()) write_json(c.out, j);
    std::cout << std::fixed << std::setprecision(6) << reps << " replicates at p = " << join(p) << ", seed " << seed
              << "\n             simulated        se      exact\n"
              << "  FWER  " << std::setw(14) << sim.fwer << std::setw(10) << sim.fwer_se << std::setw(11) << exact.fwer
              << "\n  FWP   " << std::setw(14) << sim.fwp << std::setw(10) << sim.fwp_se << std::setw(11) << exact.fwp
              << "\n  ESS   " << std::setw(14) << sim.ess << std::setw(10) << sim.ess_se << std::setw(11) << exact.ess
              << '\n';
  }
  return 0;
}

int run_check(const Common& c) {
  const std::uint64_t seed = c.seed.value_or(TrialConfig{}.seed);
  const SuiteReport rep = run_property_suite(seed, resolve_threads(c.threads));
  if (c.format == "json") {
    emit(c, rep.to_json().dump(2) + "\n");
  } else {
    std::ostringstream s;
    for (const auto& r : rep.results)
      s << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(18) << r.module << r.family << " (" << r.checks
        << " checks)" << (r.detail.empty() ? "" : ": " + r.detail) << '\n';
    s << rep.results.size() << " families, " << (rep.all_passed() ? "all passed" : "FAILURES") << '\n';
    emit(c, s.str());
  }
  return rep.all_passed() ? 0 : static_cast<int>(ExitCode::consistency);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multi-arm designs with binary outcomes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;

  std::string method;
  std::size_t weight_index = 0;
  auto* design = app.add_subcommand("design", "Optimize a design and write its report");
  design->add_option("method", method, "binomial or fisher")->required()->check(CLI::IsMember({"binomial", "fisher"}));
  design->add_option("--weight", weight_index, "Index of the weight vector whose winner heads the report");
  add_common(design, common);

  std::string design_path;
  std::vector<double> p;
  std::string ess_conv = "exact";
  auto* evaluate = app.add_subcommand("evaluate", "Exact operating characteristics at p");
  evaluate->add_option("design", design_path, "Design or report JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--p", p, "Response probabilities p0,p1,...; one value broadcasts")
      ->required()
      ->delimiter(',');
  evaluate->add_option("--ess", ess_conv, "Additional Fisher ESS convention")
      ->check(CLI::IsMember({"exact", "null_conditional"}));
  add_common(evaluate, common, false);

  double step = 0.01;
  std::vector<double> delta;
  auto* curves = app.add_subcommand("curves", "FWER, FWP and ESS curves as CSV");
  curves->add_option("design", design_path, "Design or report JSON")->required()->check(CLI::ExistingFile);
  curves->add_option("--step", step, "Grid step in p, at most 0.05");
  curves->add_option("--delta", delta, "Effect sizes (scalar broadcast or K + 1 values)")->delimiter(',');
  curves->add_option("--ess", ess_conv, "Fisher ESS convention")->check(CLI::IsMember({"exact", "null_conditional"}));
  add_common(curves, common);

  int budget = 2000;
  double alpha = 0.0;
  bool trace = false;
  auto* verify = app.add_subcommand("verify-strong", "Full-space search for the maximal FWER");
  verify->add_option("design", design_path, "Design or report JSON")->required()->check(CLI::ExistingFile);
  verify->add_option("--budget", budget, "FWER evaluations, at least 1000");
  verify->add_option("--alpha", alpha, "Significance level (default: from config or design)");
  verify->add_flag("--trace", trace, "Include every evaluated point in the JSON output");
  add_common(verify, common);

  long reps = kDefaultSimulationReps;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo replay of the decision rules");
  sim->add_option("design", design_path, "Design or report JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--p", p, "Response probabilities p0,p1,...; one value broadcasts")->required()->delimiter(',');
  sim->add_option("--reps", reps, "Replicates, at least 10000");
  add_common(sim, common, false);

  auto* check = app.add_subcommand("check", "Run the property suite");
  add_common(check, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::validation);
  }

  try {
    if (design->parsed()) return run_design(method, common, weight_index);
    if (evaluate->parsed()) return run_evaluate(design_path, p, ess_conv, common);
    if (curves->parsed()) return run_curves(design_path, step, delta, ess_conv, common);
    if (verify->parsed()) return run_verify(design_path, budget, alpha, trace, common);
    if (sim->parsed()) return run_simulate(design_path, p, reps, common);
    if (check->parsed()) return run_check(common);
  } catch (const twostage_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::consistency);
  }
  return 0;
}
