#include "reqiv/overid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/random.hpp"

namespace reqiv {

namespace {

constexpr double kZ95 = 1.959963984540054;

std::string indicator(int r) { return "R=" + std::to_string(r); }

// Rows of the final request per subject-term that has responded, as a
// multiplicity over design rows.
std::vector<double> final_respondent_rows(const Design& d, const Panel& panel) {
  std::map<std::pair<std::string, std::string>, std::size_t> last;
  for (std::size_t i = 0; i < d.panel_row.size(); ++i) {
    const auto& row = panel.rows[d.panel_row[i]];
    auto [it, fresh] = last.try_emplace({row.term_id, row.subject_id}, i);
    if (!fresh && panel.rows[d.panel_row[it->second]].R < row.R) it->second = i;
  }
  std::vector<double> m(d.panel_row.size(), 0.0);
  for (const auto& [key, i] : last) {
    if (d.s(d.pattern_of_row[i]) == 1.0) m[i] = 1.0;
  }
  return m;
}

double respondent_mean(const Design& d, const std::vector<double>& final_rows, const std::vector<double>& mult, int g) {
  double n = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < final_rows.size(); ++i) {
    const double m = final_rows[i] * mult[i];
    const int p = d.pattern_of_row[i];
    if (m == 0.0 || (g >= 0 && d.group[p] != g)) continue;
    n += m;
    sum += m * d.y(p);
  }
  return n > 0.0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

OveridResult overid_test(const Panel& panel, const ModelSpec& base_spec, const std::set<int>& tested,
                         const OveridOptions& options) {
  OveridResult out;
  const FitMethod method = options.method ? *options.method
                           : base_spec.outcome_kind == OutcomeKind::binary ? FitMethod::heckprobit
                                                                           : FitMethod::heckman_fiml;
  const Design base = build_design(panel, base_spec);

  std::set<int> observed;
  std::map<int, std::vector<double>> respondents;  // request -> selected weight per group
  for (std::size_t i = 0; i < base.panel_row.size(); ++i) {
    const int r = panel.rows[base.panel_row[i]].R;
    observed.insert(r);
    auto& cell = respondents.try_emplace(r, std::vector<double>(base.n_groups, 0.0)).first->second;
    const int p = base.pattern_of_row[i];
    if (base.s(p) == 1.0) cell[base.group[p]] += base.weight_of_row[i];
  }
  for (int r : tested) {
    if (!observed.count(r)) throw ValidationError("tested request " + std::to_string(r) + " is not observed");
  }
  for (int r : observed) {
    if (!tested.count(r)) out.identification_requests.insert(r);
  }
  if (out.identification_requests.size() < 2) {
    throw ValidationError("at least two request levels must remain for identification");
  }
  for (const auto& col : base_spec.x_columns) {
    for (int r : tested) {
      if (col == indicator(r)) throw ValidationError("outcome columns already contain " + col);
    }
  }

  ModelSpec spec = base_spec;
  for (int r : tested) {
    const auto& cell = respondents[r];
    bool empty = false;
    for (int g = 0; g < base.n_groups; ++g) {
      if (!(cell[g] > 0.0)) {
        out.warnings.push_back("no respondents at request " + std::to_string(r) + " in group '" +
                               base.group_labels[g] + "'; indicator dropped");
        empty = true;
      }
    }
    if (empty) continue;
    out.tested_requests.insert(r);
    spec.x_columns.push_back(indicator(r));
  }

  // The selection equation has to move freely at every tested level, or the
  // indicators pick up the misfit. Add R=r there unless z already spans it.
  for (int r : out.tested_requests) {
    if (std::find(spec.z_columns.begin(), spec.z_columns.end(), indicator(r)) != spec.z_columns.end()) continue;
    ModelSpec trial = spec;
    trial.z_columns.push_back(indicator(r));
    try {
      build_design(panel, trial);
    } catch (const ValidationError&) {
      continue;
    }
    spec = trial;
    out.warnings.push_back("selection equation lacked " + indicator(r) + "; added");
  }

  out.fit = fit_selection(panel, spec, method);
  if (!out.fit.converged) out.warnings.push_back("fit did not converge: " + out.fit.message);
  const SelectionFit& f = out.fit;

  std::vector<int> all;
  for (int g = 0; g < f.n_groups(); ++g) {
    std::vector<int> idx;
    auto& coefs = out.request_coefficients[f.group_labels[g]];
    for (int r : out.tested_requests) {
      int j = -1;
      for (int k = 0; k < f.kx(); ++k) {
        if (f.x_names[k] == indicator(r)) j = k;
      }
      const int i = f.beta_index(g, j);
      idx.push_back(i);
      RequestCoefficient c;
      c.request = r;
      c.estimate = f.theta(i);
      c.se = std::sqrt(std::max(0.0, f.vcov(i, i)));
      c.ci_low = c.estimate - kZ95 * c.se;
      c.ci_high = c.estimate + kZ95 * c.se;
      coefs.push_back(c);
    }
    const WaldTest w = wald_test(f, idx);
    out.wald.push_back({f.group_labels[g], w.statistic, w.df, w.p_value});
    all.insert(all.end(), idx.begin(), idx.end());
  }
  if (f.n_groups() > 1) {
    const WaldTest w = wald_test(f, all);
    out.wald.push_back({"joint", w.statistic, w.df, w.p_value});
  }

  if (options.likelihood_ratio) {
    const SelectionFit restricted = fit_selection(panel, base_spec, method);
    OveridTest lr;
    lr.group = "joint";
    lr.df = static_cast<int>(all.size());
    lr.statistic = std::max(0.0, 2.0 * (f.loglik - restricted.loglik));
    lr.p_value = chi_square_upper(lr.statistic, lr.df);
    out.likelihood_ratio = lr;
    out.warnings.push_back("likelihood-ratio test treats rows as independent and ignores clustering");
  }
  return out;
}

BiasGap bias_gap(const Panel& panel, const SelectionFit& fit, const std::string& group, int replicates) {
  const Design d = build_design(panel, fit.spec);
  const int g = group.empty() ? -1 : fit.group_index(group);
  const std::vector<double> final_rows = final_respondent_rows(d, panel);
  const std::vector<double> ones(final_rows.size(), 1.0);
  BiasGap b;
  b.respondent_mean = respondent_mean(d, final_rows, ones, g);
  if (!std::isfinite(b.respondent_mean)) throw ValidationError("no responding subjects for the bias gap");
  b.corrected_mean = pattern_mean(d, fit, fit.theta, d.w, g);
  b.gap = b.respondent_mean - b.corrected_mean;
  if (replicates > 0) {
    VarianceSpec v = fit.spec.variance;
    v.bootstrap_replicates = replicates;
    v.base_seed = derive_seed(fit.spec.variance.base_seed, "bias_gap");
    v.validate();
    const auto boot = cluster_bootstrap(d.cluster_of_row, d.n_clusters, v, [&](const Resample& rs) {
      std::vector<double> mult(d.panel_row.size(), 0.0);
      for (auto r : rs.rows) mult[r] += 1.0;
      const Eigen::VectorXd w = d.reweight(mult);
      const Eigen::VectorXd th = refit_theta(d, fit, w);
      const double raw = respondent_mean(d, final_rows, mult, g);
      if (!th.allFinite() || !std::isfinite(raw)) {
        return Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN()).eval();
      }
      return Eigen::VectorXd::Constant(1, raw - pattern_mean(d, fit, th, w, g)).eval();
    });
    b.se = boot.se(0);
    b.replicates = replicates;
    b.failed = boot.failed;
  }
  return b;
}

void write_event_study(std::ostream& out, const OveridResult& r) {
  write_csv_row(out, {"group", "request", "estimate", "se", "ci_low", "ci_high"});
  for (const auto& [group, coefs] : r.request_coefficients) {
    for (const auto& c : coefs) {
      write_csv_row(out, {group, std::to_string(c.request), format_double(c.estimate), format_double(c.se),
                          format_double(c.ci_low), format_double(c.ci_high)});
    }
  }
}

void write_overid_tests(std::ostream& out, const OveridResult& r) {
  write_csv_row(out, {"test", "group", "statistic", "df", "p_value"});
  for (const auto& t : r.wald) {
    write_csv_row(out, {"wald", t.group, format_double(t.statistic), std::to_string(t.df), format_double(t.p_value)});
  }
  if (r.likelihood_ratio) {
    const auto& t = *r.likelihood_ratio;
    write_csv_row(out, {"lr", t.group, format_double(t.statistic), std::to_string(t.df), format_double(t.p_value)});
  }
}

}  // namespace reqiv
