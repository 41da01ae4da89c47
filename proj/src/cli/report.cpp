#include "reqiv/report.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "reqiv/csv.hpp"
#include "reqiv/random.hpp"

namespace reqiv {

namespace {

int decimals_for(VariableKind k) { return k == VariableKind::binary ? 3 : 0; }

std::string cell(double v, int decimals) { return std::isfinite(v) ? format_fixed(v, decimals) : "."; }

std::string paren(double v, int decimals) { return std::isfinite(v) ? "(" + format_fixed(v, decimals) + ")" : ""; }

// Fixed-width text table with a label column.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void print(std::ostream& out) const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      width.resize(std::max(width.size(), r.size()), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i == 0) out << std::left << std::setw(static_cast<int>(width[i])) << r[i];
        else out << "  " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
      }
      out << '\n';
    }
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace

bool NctReport::all_converged() const {
  for (const auto& r : rows) {
    if (!r.fiml.converged || !r.twostep.converged) return false;
  }
  return true;
}

NctReport reproduce_nct(const NctMomentTable& moments, const NctReportOptions& options) {
  NctReport report;
  report.options = options;
  const NctDataset data = generate_nct(moments, options.generation);
  report.sizes = data.sizes;
  for (const auto& v : data.variables) {
    NctReportRow row;
    row.moments = v.moments;
    row.always_takers = v.always_takers;
    row.reminder_compliers = v.reminder_compliers;
    row.respondents = v.respondents;
    row.warnings = v.warnings;

    const Panel panel = build_panel(v.contacts);
    row.reminder_lar = estimate_lar(panel, 2, 1);

    ModelSpec spec;
    spec.outcome_kind = v.moments.kind == VariableKind::binary ? OutcomeKind::binary : OutcomeKind::continuous;
    spec.z_columns = {"R=2"};
    spec.variance.threads = options.threads;
    row.fiml = fit_fiml(panel, spec);
    row.fiml_mean = population_mean(row.fiml, panel);

    ModelSpec boot = spec;
    boot.variance.method = VarianceMethod::cluster_bootstrap;
    boot.variance.bootstrap_replicates = options.bootstrap_replicates;
    boot.variance.base_seed = derive_seed(options.seed, "twostep/" + v.moments.name);
    row.twostep = fit_heckman_twostep(panel, boot);
    row.twostep_mean = population_mean(row.twostep, panel);
    if (row.twostep.bootstrap_failures > 0) {
      row.warnings.push_back(std::to_string(row.twostep.bootstrap_failures) + " two-step bootstrap replicates failed");
    }
    if (!row.fiml.converged) row.warnings.push_back("FIML did not converge: " + row.fiml.message);
    row.bias_gap = row.respondents.mean - row.fiml_mean.estimate;
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_nct_report(std::ostream& out, const NctReport& report) {
  const auto& rows = report.rows;
  std::vector<std::string> header = {""};
  for (const auto& r : rows) header.push_back(r.moments.name);

  out << "Synthetic survey: " << report.sizes.always_takers << " always-takers, " << report.sizes.reminder_compliers
      << " reminder compliers, " << report.sizes.nonrespondents << " nonrespondents\n";
  out << "Binary counts: " << to_string(report.options.generation.binary_rounding)
      << "; +/- sd assignment seed " << report.options.generation.rounding_seed << "\n\n";

  out << "Ground truth\n";
  TextTable truth(header);
  std::vector<std::string> t = {"Population mean"};
  for (const auto& r : rows) t.push_back(cell(r.moments.ground_truth_mean, decimals_for(r.moments.kind)));
  truth.add(t);
  truth.print(out);

  out << "\nGroup means of the generated data\n";
  TextTable groups(header);
  auto group_rows = [&](const std::string& label, auto get) {
    std::vector<std::string> m = {label}, s = {""};
    for (const auto& r : rows) {
      const NctGroupSummary& g = get(r);
      const int d = decimals_for(r.moments.kind);
      m.push_back(cell(g.mean, d));
      s.push_back(paren(g.se, d == 0 ? 0 : 3));
    }
    groups.add(m);
    groups.add(s);
  };
  group_rows("Always-takers", [](const NctReportRow& r) -> const NctGroupSummary& { return r.always_takers; });
  group_rows("Reminder compliers", [](const NctReportRow& r) -> const NctGroupSummary& { return r.reminder_compliers; });
  group_rows("Always+Reminders", [](const NctReportRow& r) -> const NctGroupSummary& { return r.respondents; });
  std::vector<std::string> lar = {"LAR(2,1)"};
  for (const auto& r : rows) lar.push_back(cell(r.reminder_lar.complier_mean, decimals_for(r.moments.kind)));
  groups.add(lar);
  groups.print(out);

  out << "\nOther method (published constants)\n";
  TextTable other(header);
  const NctComparisonRow dh = nct_other_method_reported();
  std::vector<std::string> o = {dh.label}, b = {""};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int d = decimals_for(rows[i].moments.kind);
    o.push_back(i < dh.values.size() ? cell(dh.values[i], d) : ".");
    const auto it = dh.bounds.find(rows[i].moments.name);
    b.push_back(it == dh.bounds.end() ? "" : "[" + cell(it->second.first, d) + ", " + cell(it->second.second, d) + "]");
  }
  other.add(o);
  other.add(b);
  other.print(out);

  out << "\nCorrected estimates\n";
  TextTable est(header);
  auto estimate_rows = [&](const std::string& label, auto get_mean) {
    std::vector<std::string> m = {label}, s = {""};
    for (const auto& r : rows) {
      const MeanEstimate& e = get_mean(r);
      const int d = decimals_for(r.moments.kind);
      m.push_back(cell(e.estimate, d));
      s.push_back(paren(e.se, d == 0 ? 0 : 3));
    }
    est.add(m);
    est.add(s);
  };
  estimate_rows("MLE", [](const NctReportRow& r) -> const MeanEstimate& { return r.fiml_mean; });
  estimate_rows("Two step", [](const NctReportRow& r) -> const MeanEstimate& { return r.twostep_mean; });
  for (const NctComparisonRow& pub : {nct_fiml_reported(), nct_twostep_reported()}) {
    std::vector<std::string> m = {pub.label}, s = {""};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int d = decimals_for(rows[i].moments.kind);
      m.push_back(i < pub.values.size() ? cell(pub.values[i], d) : ".");
      s.push_back(i < pub.ses.size() ? paren(pub.ses[i], d == 0 ? 0 : 3) : "");
    }
    est.add(m);
    est.add(s);
  }
  std::vector<std::string> rho = {"rho (MLE)"};
  for (const auto& r : rows) rho.push_back(cell(r.fiml.rho(0), 3));
  est.add(rho);
  std::vector<std::string> gap = {"Respondent bias"};
  for (const auto& r : rows) gap.push_back(cell(r.bias_gap, decimals_for(r.moments.kind)));
  est.add(gap);
  est.print(out);
  out << "\nMLE SEs are clustered sandwich estimates; two-step SEs come from " << report.options.bootstrap_replicates
      << " cluster bootstrap replicates.\n";

  bool any = false;
  for (const auto& r : rows) {
    for (const auto& w : r.warnings) {
      if (!any) out << "\nWarnings\n";
      any = true;
      out << "  " << w << '\n';
    }
  }
}

void write_nct_estimates(std::ostream& out, const NctReport& report) {
  write_csv_row(out, {"variable", "kind", "estimator", "estimate", "se", "rho", "converged", "n_rows"});
  for (const auto& r : report.rows) {
    const std::string kind = to_string(r.moments.kind);
    write_csv_row(out, {r.moments.name, kind, "always_takers", format_double(r.always_takers.mean),
                        format_double(r.always_takers.se), "", "", std::to_string(r.always_takers.n)});
    write_csv_row(out, {r.moments.name, kind, "reminder_compliers", format_double(r.reminder_compliers.mean),
                        format_double(r.reminder_compliers.se), "", "", std::to_string(r.reminder_compliers.n)});
    write_csv_row(out, {r.moments.name, kind, "respondents", format_double(r.respondents.mean),
                        format_double(r.respondents.se), "", "", std::to_string(r.respondents.n)});
    write_csv_row(out, {r.moments.name, kind, "lar_2_1", format_double(r.reminder_lar.complier_mean),
                        format_double(r.reminder_lar.se), "", "", ""});
    write_csv_row(out, {r.moments.name, kind, "fiml", format_double(r.fiml_mean.estimate),
                        format_double(r.fiml_mean.se), format_double(r.fiml.rho(0)), r.fiml.converged ? "1" : "0",
                        std::to_string(r.fiml.n_rows)});
    write_csv_row(out, {r.moments.name, kind, "twostep", format_double(r.twostep_mean.estimate),
                        format_double(r.twostep_mean.se), format_double(r.twostep.rho(0)),
                        r.twostep.converged ? "1" : "0", std::to_string(r.twostep.n_rows)});
    write_csv_row(out, {r.moments.name, kind, "bias_gap", format_double(r.bias_gap), "", "", "", ""});
  }
}

}  // namespace reqiv
