#include "reqiv/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "reqiv/csv.hpp"
#include "reqiv/decomp.hpp"
#include "reqiv/error.hpp"
#include "reqiv/fitfile.hpp"
#include "reqiv/lar.hpp"
#include "reqiv/msr.hpp"
#include "reqiv/overid.hpp"
#include "reqiv/panel.hpp"
#include "reqiv/random.hpp"
#include "reqiv/report.hpp"
#include "reqiv/selectmod.hpp"
#include "reqiv/synthgen.hpp"

namespace fs = std::filesystem;

namespace reqiv::cli {

namespace {

constexpr std::uint64_t kDefaultSeed = 20250224;

struct ConfigEntry {
  std::string key;
  std::string value;
  std::string where;  // file:line
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<ConfigEntry> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::vector<ConfigEntry> entries;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = path + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ValidationError(where + ": empty key");
    entries.push_back({key, trim(t.substr(eq + 1)), where});
  }
  return entries;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double(item, what));
  return out;
}

std::set<int> split_ints(const std::string& s, const std::string& what) {
  std::set<int> out;
  for (const auto& item : split_list(s)) out.insert(static_cast<int>(parse_int(item, what)));
  return out;
}

// Shared state of one invocation.
struct Context {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = kDefaultSeed;
  int threads = 0;
  std::string output_dir;
  bool verbose = false;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;

  std::string output_path(const std::string& path) {
    fs::path p(path);
    if (!output_dir.empty() && p.is_relative()) p = fs::path(output_dir) / p;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    outputs.push_back(p.generic_string());
    return p.generic_string();
  }

  std::uint64_t module_seed(const std::string& label, std::uint64_t explicit_seed = 0) {
    const std::uint64_t s = explicit_seed != 0 ? explicit_seed : derive_seed(seed, label);
    seeds[label] = s;
    return s;
  }

  void warn(const std::string& w) {
    warnings.push_back(w);
    err << "warning: " << w << '\n';
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  return f;
}

// ---- model flags shared by fit and overid --------------------------------

struct ModelFlags {
  std::string panel;
  std::string method = "auto";
  std::string outcome_kind = "binary";
  std::string x;
  std::string z = "R=2";
  std::string rho = "free";
  std::string weights = "weight";
  std::string cluster = "cluster_id";
  std::string variance = "analytic_sandwich";
  int replicates = 500;
  std::string sample_rule = "all_rows";
  std::string group;
  int min_request = 1;
  int max_request = 0;
  int max_iterations = 500;
};

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--panel", m.panel, "panel file");
  sub->add_option("--method", m.method, "auto, heckprobit, heckman_fiml, heckman_twostep, outcome_only");
  sub->add_option("--outcome-kind", m.outcome_kind, "binary or continuous");
  sub->add_option("--x", m.x, "outcome-equation columns, comma separated");
  sub->add_option("--z", m.z, "selection-equation columns, comma separated");
  sub->add_option("--rho", m.rho, "'free' or a fixed value");
  sub->add_option("--weights", m.weights, "weight column, or 'none'");
  sub->add_option("--cluster", m.cluster, "cluster column");
  sub->add_option("--variance", m.variance, "analytic_sandwich or cluster_bootstrap");
  sub->add_option("--replicates", m.replicates, "bootstrap replicates");
  sub->add_option("--sample-rule", m.sample_rule, "all_rows or final_request_only");
  sub->add_option("--group", m.group, "fit separate parameters by this covariate");
  sub->add_option("--min-request", m.min_request, "drop rows with fewer requests");
  sub->add_option("--max-request", m.max_request, "drop rows with more requests (0: none)");
  sub->add_option("--max-iterations", m.max_iterations, "optimizer iteration limit");
}

ModelSpec model_spec(const ModelFlags& m, Context& ctx, const std::string& label) {
  ModelSpec s;
  s.outcome_kind = parse_outcome_kind(m.outcome_kind);
  s.x_columns = split_list(m.x);
  s.z_columns = split_list(m.z);
  if (m.rho != "free") s.rho_constraint = parse_double(m.rho, "--rho");
  s.weight_column = m.weights;
  s.variance.method = parse_variance_method(m.variance);
  s.variance.cluster_column = m.cluster;
  s.variance.bootstrap_replicates = m.replicates;
  s.variance.base_seed = ctx.module_seed(label);
  s.variance.threads = ctx.threads;
  s.sample_rule = parse_sample_rule(m.sample_rule);
  s.group_column = m.group;
  s.min_request = m.min_request;
  s.max_request = m.max_request;
  s.optimizer.max_iterations = m.max_iterations;
  s.validate();
  return s;
}

FitMethod method_for(const std::string& method, OutcomeKind kind) {
  if (method == "auto" || method == "fiml") {
    return kind == OutcomeKind::binary ? FitMethod::heckprobit : FitMethod::heckman_fiml;
  }
  return parse_fit_method(method);
}

Panel load_panel(const std::string& path) {
  if (path.empty()) throw ValidationError("--panel is required");
  return read_panel_file(path);
}

// ---- subcommands ----------------------------------------------------------

struct BuildPanelFlags {
  std::string contacts;
  std::string timing_term;
  std::string timing_file;
  int subjects = 1000;
  std::string out = "panel.csv";
  std::string diagnostics;
  double min_gap_days = 3.0;
  bool no_t0 = false;
  std::uint64_t imputation_seed = 0;
};

int cmd_build_panel(const BuildPanelFlags& f, Context& ctx) {
  ContactTable table;
  if (!f.timing_term.empty()) {
    if (!f.contacts.empty()) throw ValidationError("give either --contacts or --timing-term, not both");
    const auto timing = read_request_timing(f.timing_file.empty() ? bundled_request_timing_path() : f.timing_file);
    table = timing_fixture_contacts(find_term(timing, f.timing_term), f.subjects);
  } else {
    if (f.contacts.empty()) throw ValidationError("--contacts is required");
    table = read_contacts_file(f.contacts);
  }
  PanelBuildConfig config;
  config.imputation_seed = ctx.module_seed("build-panel", f.imputation_seed);
  config.min_request_gap =
      std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::ratio<86400>>(f.min_gap_days));
  config.include_t0 = !f.no_t0;
  const Panel panel = build_panel(table, config);
  {
    auto out = open_out(ctx.output_path(f.out));
    write_panel(out, panel);
  }
  const PanelDiagnostics diag = validate_panel(panel, &table, config.min_request_gap);
  for (const auto& n : diag.notes) ctx.warn(n);
  for (const auto& v : diag.violations) {
    ctx.warn(v.tag + " (" + v.term_id + "/" + v.subject_id + ", t=" + std::to_string(v.t) + "): " + v.detail);
  }
  if (!f.diagnostics.empty()) {
    auto out = open_out(ctx.output_path(f.diagnostics));
    write_csv_row(out, {"term_id", "R", "n", "response_rate"});
    for (const auto& r : diag.rates) {
      write_csv_row(out, {r.term_id, std::to_string(r.R), std::to_string(r.n), format_double(r.rate)});
    }
  }
  ctx.out << "panel: " << panel.rows.size() << " rows from " << table.records.size() << " contact records\n";
  return 0;
}

struct LarFlags {
  std::string panel;
  int r = 0;
  int r_prime = -1;
  std::string variance = "analytic_sandwich";
  int replicates = 500;
  std::string out = "lar.csv";
  std::string propensities;
};

int cmd_lar(const LarFlags& f, Context& ctx) {
  const Panel panel = load_panel(f.panel);
  VarianceSpec v;
  v.method = parse_variance_method(f.variance);
  v.bootstrap_replicates = f.replicates;
  v.base_seed = ctx.module_seed("lar");
  v.threads = ctx.threads;
  v.validate();
  std::vector<LarEstimate> estimates;
  if (f.r > 0) {
    estimates.push_back(estimate_lar(panel, f.r, f.r_prime < 0 ? f.r - 1 : f.r_prime, v));
  } else {
    LarProfile profile = lar_profile(panel, v);
    for (const auto& s : profile.skipped) ctx.warn(s);
    estimates = profile.estimates;
  }
  {
    auto out = open_out(ctx.output_path(f.out));
    write_csv_row(out, {"r", "r_prime", "p_r", "p_r_prime", "mean_y_r", "mean_y_r_prime", "complier_mean", "se", "n_r",
                        "n_r_prime", "se_method"});
    for (const auto& e : estimates) {
      write_csv_row(out,
                    {std::to_string(e.r), std::to_string(e.r_prime), format_double(e.p_r), format_double(e.p_r_prime),
                     format_double(e.mean_y_r), format_double(e.mean_y_r_prime), format_double(e.complier_mean),
                     format_double(e.se), std::to_string(e.n_r), std::to_string(e.n_r_prime), e.se_method});
    }
  }
  const PropensityTable props = estimate_propensities(panel);
  if (!f.propensities.empty()) {
    auto out = open_out(ctx.output_path(f.propensities));
    write_csv_row(out, {"R", "p", "se", "n"});
    for (const auto& [r, p] : props.by_request) {
      write_csv_row(out, {std::to_string(r), format_double(p.p), format_double(p.se), std::to_string(p.n)});
    }
  }
  ctx.out << "P(R):";
  for (const auto& [r, p] : props.by_request) ctx.out << ' ' << r << '=' << format_fixed(p.p, 3);
  ctx.out << '\n';
  for (const auto& e : estimates) {
    ctx.out << "LAR(" << e.r << ',' << e.r_prime << ") = " << format_double(e.complier_mean) << " (se "
            << format_double(e.se) << ")\n";
  }
  return 0;
}

struct FitFlags {
  ModelFlags model;
  std::string out = "parameters.csv";
  std::string fit_out = "fit.json";
  std::string means;
};

int cmd_fit(const FitFlags& f, Context& ctx) {
  const Panel panel = load_panel(f.model.panel);
  const ModelSpec spec = model_spec(f.model, ctx, "fit");
  const SelectionFit fit = fit_selection(panel, spec, method_for(f.model.method, spec.outcome_kind));
  {
    auto out = open_out(ctx.output_path(f.out));
    write_parameter_table(out, fit);
  }
  write_fit_file(ctx.output_path(f.fit_out), fit);
  if (!f.means.empty()) {
    auto out = open_out(ctx.output_path(f.means));
    write_csv_row(out, {"group", "target", "estimate", "se", "n"});
    std::vector<std::string> groups = {""};
    if (fit.n_groups() > 1) groups = fit.group_labels;
    for (const auto& g : groups) {
      for (const auto target : {MeanTarget::corrected, MeanTarget::respondent_only}) {
        const MeanEstimate m = population_mean(fit, panel, target, g);
        write_csv_row(out, {g.empty() ? "all" : g, target == MeanTarget::corrected ? "corrected" : "fitted_respondents",
                            format_double(m.estimate), format_double(m.se), std::to_string(m.n)});
      }
      const BiasGap b = bias_gap(panel, fit, g);
      write_csv_row(out, {g.empty() ? "all" : g, "raw_respondents", format_double(b.respondent_mean), "", ""});
      write_csv_row(out, {g.empty() ? "all" : g, "respondent_bias", format_double(b.gap), "", ""});
    }
  }
  ctx.out << to_string(fit.method) << ": loglik " << format_double(fit.loglik) << ", " << fit.n_rows << " rows, "
          << (fit.converged ? "converged" : "did not converge") << " after " << fit.iterations << " iterations\n";
  if (fit.bootstrap_failures > 0) ctx.warn(std::to_string(fit.bootstrap_failures) + " bootstrap replicates failed");
  if (!fit.converged) {
    ctx.warn("estimation did not converge: " + fit.message);
    return 2;
  }
  return 0;
}

struct MsrFlags {
  std::string fit;
  std::string panel;
  int grid = 512;
  std::string group;
  std::string profile;
  std::string out = "msr_curve.csv";
  std::string segments_out = "complier_segments.csv";
};

int cmd_msr(const MsrFlags& f, Context& ctx) {
  if (f.fit.empty()) throw ValidationError("--fit is required");
  const SelectionFit fit = read_fit_file(f.fit);
  const Panel panel = load_panel(f.panel);
  std::vector<double> profile;
  if (!f.profile.empty()) profile = split_doubles(f.profile, "--profile");
  const MsrCurve curve = msr_curve(fit, panel, f.grid, f.group, f.profile.empty() ? nullptr : &profile);
  for (const auto& n : curve.notes) ctx.warn(n);
  {
    auto out = open_out(ctx.output_path(f.out));
    write_msr_curve(out, curve);
  }
  {
    auto out = open_out(ctx.output_path(f.segments_out));
    write_complier_segments(out, curve);
  }
  ctx.out << "m(u) on " << curve.u_grid.size() << " points, bands: " << curve.ci_method << ", "
          << curve.complier_segments.size() << " complier segments\n";
  return 0;
}

struct DecompFlags {
  std::string fit;
  std::string panel;
  std::string reference;
  std::string exclude;
  std::string se = "bootstrap";
  int replicates = 0;
  std::string out = "decomposition.csv";
};

int cmd_decompose(const DecompFlags& f, Context& ctx) {
  if (f.fit.empty()) throw ValidationError("--fit is required");
  const SelectionFit fit = read_fit_file(f.fit);
  const Panel panel = load_panel(f.panel);
  DecompOptions o;
  o.reference_group = f.reference;
  o.excluded = split_list(f.exclude);
  o.se_method = parse_decomp_se(f.se);
  if (f.replicates > 0) o.replicates = f.replicates;
  o.seed = ctx.module_seed("decompose");
  o.threads = ctx.threads;
  const DecompositionResult r = decompose(fit, panel, o);
  for (const auto& w : r.warnings) ctx.warn(w);
  {
    auto out = open_out(ctx.output_path(f.out));
    write_decomposition(out, r);
  }
  ctx.out << "gap " << r.comparison_group << " - " << r.reference_group << " = " << format_double(r.total_gap.value)
          << " (X " << format_double(r.delta_X.value) << ", beta " << format_double(r.delta_beta.value)
          << ", unexplained " << format_double(r.delta_R.value) << "); SEs: " << r.se_method << '\n';
  return 0;
}

struct OveridFlags {
  ModelFlags model;
  std::string tested;
  std::string identification;
  bool lr = false;
  std::string out = "event_study.csv";
  std::string tests_out = "overid_tests.csv";
};

int cmd_overid(const OveridFlags& f, Context& ctx) {
  const Panel panel = load_panel(f.model.panel);
  const ModelSpec spec = model_spec(f.model, ctx, "overid");
  std::set<int> tested = split_ints(f.tested, "--tested");
  if (!f.identification.empty()) {
    const std::set<int> id = split_ints(f.identification, "--identification");
    std::set<int> observed;
    for (const auto& row : panel.rows) {
      if (row.R >= spec.min_request && (spec.max_request == 0 || row.R <= spec.max_request)) observed.insert(row.R);
    }
    for (int r : id) {
      if (tested.count(r)) throw ValidationError("request " + std::to_string(r) + " is both tested and reserved");
    }
    if (f.tested.empty()) {
      for (int r : observed) {
        if (!id.count(r)) tested.insert(r);
      }
    }
  }
  OveridOptions o;
  o.method = method_for(f.model.method, spec.outcome_kind);
  o.likelihood_ratio = f.lr;
  const OveridResult r = overid_test(panel, spec, tested, o);
  for (const auto& w : r.warnings) ctx.warn(w);
  {
    auto out = open_out(ctx.output_path(f.out));
    write_event_study(out, r);
  }
  {
    auto out = open_out(ctx.output_path(f.tests_out));
    write_overid_tests(out, r);
  }
  for (const auto& t : r.wald) {
    ctx.out << "Wald " << t.group << ": " << format_double(t.statistic) << " on " << t.df
            << " df, p = " << format_double(t.p_value) << '\n';
  }
  return r.fit.converged ? 0 : 2;
}

struct SynthFlags {
  std::string moments;
  std::string rounding = "floor";
  std::uint64_t rounding_seed = kDefaultSeed;
  std::string out_dir = "nct";
};

NctMomentTable load_moments(const std::string& path) {
  return path.empty() ? nct_reference_moments() : read_nct_moments_file(path);
}

int cmd_synth_nct(const SynthFlags& f, Context& ctx) {
  NctConfig config;
  config.binary_rounding = parse_count_rounding(f.rounding);
  config.rounding_seed = f.rounding_seed;
  ctx.seeds["rounding"] = config.rounding_seed;
  const NctDataset data = generate_nct(load_moments(f.moments), config);
  for (const auto& v : data.variables) {
    write_contacts_file(ctx.output_path((fs::path(f.out_dir) / ("contacts_" + v.moments.name + ".csv")).string()),
                        v.contacts);
    for (const auto& w : v.warnings) ctx.warn(w);
  }
  {
    auto out = open_out(ctx.output_path((fs::path(f.out_dir) / "ground_truth.csv").string()));
    write_csv_row(out, {"variable", "kind", "ground_truth_mean"});
    for (const auto& v : data.variables) {
      write_csv_row(out, {v.moments.name, to_string(v.moments.kind), format_double(v.moments.ground_truth_mean)});
    }
  }
  {
    auto out = open_out(ctx.output_path((fs::path(f.out_dir) / "group_means.csv").string()));
    write_csv_row(out, {"variable", "group", "n", "mean", "se"});
    for (const auto& v : data.variables) {
      for (const auto& [name, g] :
           {std::pair{"always_takers", v.always_takers}, std::pair{"reminder_compliers", v.reminder_compliers},
            std::pair{"respondents", v.respondents}}) {
        write_csv_row(out, {v.moments.name, name, std::to_string(g.n), format_double(g.mean), format_double(g.se)});
      }
    }
  }
  {
    auto out = open_out(ctx.output_path((fs::path(f.out_dir) / "moments.csv").string()));
    write_nct_moments(out, load_moments(f.moments));
  }
  ctx.out << "synthetic survey: " << data.sizes.always_takers << " always-takers, " << data.sizes.reminder_compliers
          << " reminder compliers, " << data.sizes.nonrespondents << " nonrespondents; group sizes rounded "
          << "half-to-even cumulatively, binary counts " << to_string(config.binary_rounding) << '\n';
  return 0;
}

struct SimFlags {
  int n_subjects = 10000;
  std::string propensities = "0.3,0.5";
  std::string msr_kind = "probit_index";
  double msr_level = 0.5;
  double msr_slope = 0.0;
  double msr_beta = 0.0;
  double msr_rho = 0.0;
  std::string outcome_kind = "binary";
  double noise_sd = 1.0;
  bool logistic_latent = false;
  double time_drift = 0.0;
  double request_effect = 0.0;
  std::string request_effect_requests;
  double defier_share = 0.0;
  double nonuniform_strength = 0.0;
  std::uint64_t sim_seed = 0;
  std::string out_dir = "sim";
};

int cmd_simulate(const SimFlags& f, Context& ctx) {
  SimConfig c;
  c.n_subjects = f.n_subjects;
  c.propensities = split_doubles(f.propensities, "--propensities");
  c.msr.kind = parse_msr_kind(f.msr_kind);
  c.msr.level = f.msr_level;
  c.msr.slope = f.msr_slope;
  c.msr.beta = f.msr_beta;
  c.msr.rho = f.msr_rho;
  c.outcome_kind = parse_outcome_kind(f.outcome_kind);
  c.noise_sd = f.noise_sd;
  c.logistic_latent = f.logistic_latent;
  c.violations.time_drift = f.time_drift;
  c.violations.request_effect = f.request_effect;
  c.violations.request_effect_requests = split_ints(f.request_effect_requests, "--request-effect-requests");
  c.violations.defier_share = f.defier_share;
  c.violations.nonuniform_strength = f.nonuniform_strength;
  c.seed = ctx.module_seed("simulate", f.sim_seed);
  c.validate();
  const SimResult sim = simulate(c);
  write_contacts_file(ctx.output_path((fs::path(f.out_dir) / "contacts.csv").string()), sim_contacts(sim));
  {
    auto out = open_out(ctx.output_path((fs::path(f.out_dir) / "truth.csv").string()));
    write_csv_row(out, {"quantity", "r", "r_prime", "analytic", "population", "n"});
    write_csv_row(out, {"mean", "", "", format_double(sim.truth.mean_analytic),
                        format_double(sim.truth.mean_population), std::to_string(sim.subjects.size())});
    for (const auto& t : sim.truth.compliers) {
      write_csv_row(out, {"complier_mean", std::to_string(t.r), std::to_string(t.r_prime), format_double(t.analytic),
                          format_double(t.population), std::to_string(t.n)});
    }
  }
  ctx.out << "simulated " << sim.subjects.size() << " subjects; E[Y*] = " << format_double(sim.truth.mean_analytic)
          << '\n';
  return 0;
}

struct ReproduceFlags {
  std::string moments;
  std::string rounding = "floor";
  std::uint64_t rounding_seed = kDefaultSeed;
  int replicates = 500;
  std::string out = "nct_report.txt";
  std::string estimates_out = "nct_estimates.csv";
};

int cmd_reproduce_nct(const ReproduceFlags& f, Context& ctx) {
  NctReportOptions o;
  o.generation.binary_rounding = parse_count_rounding(f.rounding);
  o.generation.rounding_seed = f.rounding_seed;
  o.bootstrap_replicates = f.replicates;
  o.seed = ctx.module_seed("reproduce-nct");
  o.threads = ctx.threads;
  ctx.seeds["rounding"] = o.generation.rounding_seed;
  const NctReport report = reproduce_nct(load_moments(f.moments), o);
  std::ostringstream text;
  write_nct_report(text, report);
  {
    auto out = open_out(ctx.output_path(f.out));
    out << text.str();
  }
  {
    auto out = open_out(ctx.output_path(f.estimates_out));
    write_nct_estimates(out, report);
  }
  ctx.out << text.str();
  for (const auto& row : report.rows) {
    for (const auto& w : row.warnings) ctx.warnings.push_back(w);
  }
  return report.all_converged() ? 0 : 2;
}

// ---- metadata --------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> resolved_options(const CLI::App& app, const CLI::App& sub) {
  std::vector<std::pair<std::string, std::string>> out;
  auto collect = [&](const CLI::App& a, const std::string& prefix) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "config" || name == "version") continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      } else {
        value = opt->get_default_str();
      }
      out.emplace_back(prefix + name, value);
    }
  };
  collect(app, "");
  collect(sub, sub.get_name() + ".");
  std::sort(out.begin(), out.end());
  return out;
}

void write_metadata(const std::string& path, const std::string& subcommand,
                    const std::vector<std::pair<std::string, std::string>>& resolved, const Context& ctx, int code) {
  nlohmann::ordered_json j;
  j["tool"] = "reqiv";
  j["version"] = kVersion;
  j["subcommand"] = subcommand;
  j["config_hash"] = config_hash(resolved);
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : resolved) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ctx.seeds) seeds[k] = v;
  j["seeds"] = seeds;
  j["outputs"] = ctx.outputs;
  j["warnings"] = ctx.warnings;
  j["exit_code"] = code;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

std::string config_hash(const std::vector<std::pair<std::string, std::string>>& resolved) {
  std::string canonical;
  for (const auto& [k, v] : resolved) canonical += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_label(canonical)));
  return buf;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, kDefaultSeed, 0, {}, false, {}, {}, {}};
  if (const char* dir = std::getenv("REQIV_OUTPUT_DIR")) ctx.output_dir = dir;

  CLI::App app{"Nonresponse correction with data requests as instruments", "reqiv"};
  app.option_defaults()->always_capture_default();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  app.add_option("--config", config_path, "key = value file; flags given on the command line win");
  app.add_option("--seed", ctx.seed, "global seed; module seeds derive from it");
  app.add_option("--threads", ctx.threads, "bootstrap threads (default: REQIV_THREADS or 1)");
  app.add_option("--output-dir", ctx.output_dir, "directory for relative output paths (default: REQIV_OUTPUT_DIR)");
  app.add_flag("--verbose,-v", ctx.verbose, "print progress");

  BuildPanelFlags bp;
  auto* s_bp = app.add_subcommand("build-panel", "contact records to a request panel");
  s_bp->add_option("--contacts", bp.contacts, "contact record file");
  s_bp->add_option("--timing-term", bp.timing_term, "generate contacts matching a bundled term's timing instead");
  s_bp->add_option("--timing-file", bp.timing_file, "request timing table (default: bundled)");
  s_bp->add_option("--subjects", bp.subjects, "subjects for --timing-term");
  s_bp->add_option("--out", bp.out, "panel file");
  s_bp->add_option("--diagnostics", bp.diagnostics, "response-rate table");
  s_bp->add_option("--min-gap-days", bp.min_gap_days, "minimum days between requests");
  s_bp->add_flag("--no-t0", bp.no_t0, "omit the t = 0 rows");
  s_bp->add_option("--imputation-seed", bp.imputation_seed, "seed for opt-out strata (default: derived)");

  LarFlags lf;
  auto* s_lar = app.add_subcommand("lar", "local average responses");
  s_lar->add_option("--panel", lf.panel, "panel file");
  s_lar->add_option("--r", lf.r, "request level (0: every consecutive pair)");
  s_lar->add_option("--r-prime", lf.r_prime, "comparison level (default r - 1)");
  s_lar->add_option("--variance", lf.variance, "analytic_sandwich or cluster_bootstrap");
  s_lar->add_option("--replicates", lf.replicates, "bootstrap replicates");
  s_lar->add_option("--out", lf.out, "estimates");
  s_lar->add_option("--propensities", lf.propensities, "P(R) table");

  FitFlags ff;
  auto* s_fit = app.add_subcommand("fit", "selection model");
  add_model_flags(s_fit, ff.model);
  s_fit->add_option("--out", ff.out, "parameter table");
  s_fit->add_option("--fit-out", ff.fit_out, "fit file for later steps");
  s_fit->add_option("--means", ff.means, "corrected and respondent population means");

  MsrFlags mf;
  auto* s_msr = app.add_subcommand("msr-curve", "marginal survey response curve");
  s_msr->add_option("--fit", mf.fit, "fit file");
  s_msr->add_option("--panel", mf.panel, "panel the fit used");
  s_msr->add_option("--grid", mf.grid, "grid points");
  s_msr->add_option("--group", mf.group, "group label for grouped fits");
  s_msr->add_option("--profile", mf.profile, "values of the fit's non-intercept outcome columns, comma separated");
  s_msr->add_option("--out", mf.out, "curve");
  s_msr->add_option("--segments-out", mf.segments_out, "complier segments");

  DecompFlags df;
  auto* s_dec = app.add_subcommand("decompose", "two-group gap decomposition");
  s_dec->add_option("--fit", df.fit, "joint fit file (with --group)");
  s_dec->add_option("--panel", df.panel, "panel the fit used");
  s_dec->add_option("--reference", df.reference, "reference group (default: second label)");
  s_dec->add_option("--exclude", df.exclude, "columns left to the unexplained part, comma separated");
  s_dec->add_option("--se", df.se, "bootstrap, delta or none");
  s_dec->add_option("--replicates", df.replicates, "bootstrap replicates (default 200)");
  s_dec->add_option("--out", df.out, "report");

  OveridFlags of;
  auto* s_ov = app.add_subcommand("overid", "predictable-trends overidentification test");
  add_model_flags(s_ov, of.model);
  s_ov->add_option("--tested", of.tested, "tested request levels, comma separated");
  s_ov->add_option("--identification", of.identification, "request levels kept for identification");
  s_ov->add_flag("--lr", of.lr, "also report a likelihood-ratio test (ignores clustering)");
  s_ov->add_option("--out", of.out, "event-study table");
  s_ov->add_option("--tests-out", of.tests_out, "test statistics");

  SynthFlags sf;
  auto* s_syn = app.add_subcommand("synth-nct", "synthetic two-request survey from reported moments");
  s_syn->add_option("--moments", sf.moments, "moment table (default: built-in)");
  s_syn->add_option("--rounding", sf.rounding, "binary counts: floor or nearest");
  s_syn->add_option("--rounding-seed", sf.rounding_seed, "seed for the +/- sd assignment");
  s_syn->add_option("--out-dir", sf.out_dir, "output directory");

  SimFlags mc;
  auto* s_sim = app.add_subcommand("simulate", "Monte Carlo population with known truth");
  s_sim->add_option("--n-subjects", mc.n_subjects, "subjects");
  s_sim->add_option("--propensities", mc.propensities, "P(1..T), comma separated");
  s_sim->add_option("--msr-kind", mc.msr_kind, "constant, linear or probit_index");
  s_sim->add_option("--msr-level", mc.msr_level, "constant level / linear intercept");
  s_sim->add_option("--msr-slope", mc.msr_slope, "linear slope");
  s_sim->add_option("--msr-beta", mc.msr_beta, "probit index beta");
  s_sim->add_option("--msr-rho", mc.msr_rho, "probit index rho");
  s_sim->add_option("--outcome-kind", mc.outcome_kind, "binary or continuous");
  s_sim->add_option("--noise-sd", mc.noise_sd, "continuous noise sd");
  s_sim->add_flag("--logistic-latent", mc.logistic_latent, "logistic instead of normal latent error (binary)");
  s_sim->add_option("--time-drift", mc.time_drift, "drift per period");
  s_sim->add_option("--request-effect", mc.request_effect, "shift on responses at the listed requests");
  s_sim->add_option("--request-effect-requests", mc.request_effect_requests, "requests with the shift");
  s_sim->add_option("--defier-share", mc.defier_share, "share redrawing aversion each period");
  s_sim->add_option("--nonuniform-strength", mc.nonuniform_strength, "withholding probability for high outcomes");
  s_sim->add_option("--sim-seed", mc.sim_seed, "seed (default: derived)");
  s_sim->add_option("--out-dir", mc.out_dir, "output directory");

  ReproduceFlags rf;
  auto* s_rep = app.add_subcommand("reproduce-nct", "synthetic survey, panels, FIML and two-step fits, report");
  s_rep->add_option("--moments", rf.moments, "moment table (default: built-in)");
  s_rep->add_option("--rounding", rf.rounding, "binary counts: floor or nearest");
  s_rep->add_option("--rounding-seed", rf.rounding_seed, "seed for the +/- sd assignment");
  s_rep->add_option("--replicates", rf.replicates, "two-step bootstrap replicates");
  s_rep->add_option("--out", rf.out, "report");
  s_rep->add_option("--estimates-out", rf.estimates_out, "machine-readable estimates");

  std::vector<std::string> args(args_in.rbegin(), args_in.rend());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  int code = 0;
  std::string meta_path;
  try {
    if (!config_path.empty()) {
      for (const auto& e : read_config(config_path)) {
        std::string key = e.key;
        const auto dot = key.find('.');
        if (dot != std::string::npos) {
          if (key.substr(0, dot) != sub->get_name()) continue;
          key = key.substr(dot + 1);
        }
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt) opt = app.get_option_no_throw("--" + key);
        if (!opt || key == "config")
          throw ValidationError(e.where + ": unknown key '" + e.key + "' for " + sub->get_name());
        if (opt->count() > 0) continue;
        try {
          opt->add_result(e.value);
          opt->run_callback();
        } catch (const CLI::Error& ce) {
          throw ValidationError(e.where + ": bad value for '" + e.key + "': " + ce.what());
        }
      }
    }
    const std::string name = sub->get_name();
    if (name == "build-panel") {
      code = cmd_build_panel(bp, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "lar") {
      code = cmd_lar(lf, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "fit") {
      code = cmd_fit(ff, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "msr-curve") {
      code = cmd_msr(mf, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "decompose") {
      code = cmd_decompose(df, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "overid") {
      code = cmd_overid(of, ctx);
      meta_path = ctx.outputs.front();
    } else if (name == "synth-nct") {
      code = cmd_synth_nct(sf, ctx);
      meta_path = (fs::path(ctx.outputs.front()).parent_path() / "run").generic_string();
    } else if (name == "simulate") {
      code = cmd_simulate(mc, ctx);
      meta_path = (fs::path(ctx.outputs.front()).parent_path() / "run").generic_string();
    } else if (name == "reproduce-nct") {
      code = cmd_reproduce_nct(rf, ctx);
      meta_path = ctx.outputs.front();
    }
    write_metadata(meta_path + ".meta.json", name, resolved_options(app, *sub), ctx, code);
  } catch (const EstimationError& e) {
    err << "estimation error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return code;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace reqiv::cli
