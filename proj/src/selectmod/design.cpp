#include "reqiv/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"

namespace reqiv {

std::string to_string(OutcomeKind k) { return k == OutcomeKind::binary ? "binary" : "continuous"; }
std::string to_string(SampleRule r) { return r == SampleRule::all_rows ? "all_rows" : "final_request_only"; }

OutcomeKind parse_outcome_kind(const std::string& s) {
  if (s == "binary") return OutcomeKind::binary;
  if (s == "continuous") return OutcomeKind::continuous;
  throw ValidationError("unknown outcome kind '" + s + "'");
}

SampleRule parse_sample_rule(const std::string& s) {
  if (s == "all_rows" || s == "all") return SampleRule::all_rows;
  if (s == "final_request_only" || s == "final") return SampleRule::final_request_only;
  throw ValidationError("unknown sample rule '" + s + "'");
}

void ModelSpec::validate() const {
  variance.validate();
  optimizer.validate();
  if (rho_constraint && !(std::abs(*rho_constraint) < 1.0)) {
    throw ValidationError("rho constraint must lie strictly inside (-1, 1)");
  }
  if (min_request < 0) throw ValidationError("min_request must be non-negative");
  if (max_request != 0 && max_request < min_request) throw ValidationError("max_request below min_request");
  if (!rho_constraint) {
    bool excluded = false;
    for (const auto& c : z_columns) {
      if (std::find(x_columns.begin(), x_columns.end(), c) == x_columns.end()) excluded = true;
    }
    if (!excluded) {
      throw ValidationError(
          "selection equation needs a column excluded from the outcome equation when rho is free");
    }
  }
}

namespace {

std::vector<std::string> split_product(const std::string& term) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto p = term.find(':', start);
    parts.push_back(term.substr(start, p - start));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return parts;
}

double atom_value(const Panel& panel, const PanelRow& row, const std::string& a) {
  if (a == "R") return row.R;
  if (a == "t") return row.t;
  if (a.rfind("R>=", 0) == 0) return row.R >= std::stoi(a.substr(3)) ? 1.0 : 0.0;
  if (a.rfind("R=", 0) == 0) return row.R == std::stoi(a.substr(2)) ? 1.0 : 0.0;
  if (a.rfind("term=", 0) == 0) return row.term_id == a.substr(5) ? 1.0 : 0.0;
  if (auto j = panel.covariate_index(a)) return row.covariates[*j];
  throw ValidationError("unknown column '" + a + "'");
}

void check_atom(const Panel& panel, const std::string& a) {
  auto is_int = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (a == "R" || a == "t") return;
  if (a.rfind("R>=", 0) == 0 && is_int(a.substr(3))) return;
  if (a.rfind("R=", 0) == 0 && is_int(a.substr(2))) return;
  if (a.rfind("term=", 0) == 0 && a.size() > 5) return;
  if (panel.covariate_index(a)) return;
  throw ValidationError("unknown column '" + a + "'");
}

// Names the first column that is a linear combination of earlier ones.
void check_rank(const Eigen::MatrixXd& m, const Eigen::VectorXd& w, const std::vector<std::string>& names,
                const std::string& equation, const std::string& group) {
  if (m.rows() == 0) return;
  const Eigen::MatrixXd a = m.transpose() * w.asDiagonal() * m;
  for (Eigen::Index k = 1; k <= a.cols(); ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.topLeftCorner(k, k), Eigen::EigenvaluesOnly);
    const double top = std::max(es.eigenvalues().maxCoeff(), 1e-300);
    if (es.eigenvalues().minCoeff() <= 1e-11 * top) {
      throw ValidationError(equation + " equation" + (group.empty() ? "" : " (group " + group + ")") +
                            ": column '" + names[k - 1] + "' is collinear with earlier columns or constant zero");
    }
  }
}

}  // namespace

double column_value(const Panel& panel, const PanelRow& row, const std::string& term) {
  double v = 1.0;
  for (const auto& a : split_product(term)) v *= atom_value(panel, row, a);
  return v;
}

void check_column(const Panel& panel, const std::string& term) {
  for (const auto& a : split_product(term)) check_atom(panel, a);
}

Eigen::VectorXd Design::reweight(const std::vector<double>& multiplicity) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(patterns());
  for (std::size_t i = 0; i < pattern_of_row.size(); ++i) {
    out(pattern_of_row[i]) += multiplicity[i] * weight_of_row[i];
  }
  return out;
}

std::vector<std::string> group_labels(const Panel& panel, const std::string& group_column) {
  if (group_column.empty()) return {"all"};
  const auto j = panel.covariate_index(group_column);
  if (!j) throw ValidationError("unknown group column '" + group_column + "'");
  std::set<double> values;
  for (const auto& row : panel.rows) {
    const double v = row.covariates[*j];
    if (std::isnan(v)) throw ValidationError("missing value in group column '" + group_column + "'");
    values.insert(v);
  }
  std::vector<std::string> out;
  for (double v : values) out.push_back(format_double(v));
  return out;
}

Design build_design(const Panel& panel, const ModelSpec& spec) {
  spec.validate();
  for (const auto& c : spec.x_columns) check_column(panel, c);
  for (const auto& c : spec.z_columns) check_column(panel, c);
  std::optional<std::size_t> weight_col;
  const bool unit_weights = spec.weight_column == "none" || spec.weight_column.empty();
  if (!unit_weights && spec.weight_column != "weight") {
    weight_col = panel.covariate_index(spec.weight_column);
    if (!weight_col) throw ValidationError("unknown weight column '" + spec.weight_column + "'");
  }

  Design d;
  d.x_names = {"(intercept)"};
  d.x_names.insert(d.x_names.end(), spec.x_columns.begin(), spec.x_columns.end());
  d.z_names = {"(intercept)"};
  d.z_names.insert(d.z_names.end(), spec.z_columns.begin(), spec.z_columns.end());
  d.group_labels = group_labels(panel, spec.group_column);
  d.n_groups = static_cast<int>(d.group_labels.size());
  std::optional<std::size_t> group_col;
  if (!spec.group_column.empty()) group_col = panel.covariate_index(spec.group_column);

  auto keep = [&](const PanelRow& row) {
    return row.R >= spec.min_request && (spec.max_request == 0 || row.R <= spec.max_request);
  };
  std::vector<std::size_t> rows;
  if (spec.sample_rule == SampleRule::all_rows) {
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
      if (keep(panel.rows[i])) rows.push_back(i);
    }
  } else {
    std::map<std::pair<std::string, std::string>, std::size_t> last;
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
      const auto& row = panel.rows[i];
      if (!keep(row)) continue;
      auto [it, fresh] = last.try_emplace({row.term_id, row.subject_id}, i);
      if (!fresh && panel.rows[it->second].R < row.R) it->second = i;
    }
    for (const auto& [key, i] : last) rows.push_back(i);
    std::sort(rows.begin(), rows.end());
  }
  if (rows.empty()) throw ValidationError("no rows in the estimation sample");

  const std::size_t kx = d.x_names.size(), kz = d.z_names.size();
  // Pattern key: group, S_hat, outcome, X row, Z row.
  std::vector<double> key(3 + kx + kz);
  auto fill_key = [&](const PanelRow& row) {
    int g = 0;
    if (group_col) {
      const std::string label = format_double(row.covariates[*group_col]);
      g = static_cast<int>(std::find(d.group_labels.begin(), d.group_labels.end(), label) - d.group_labels.begin());
    }
    key[0] = g;
    key[1] = row.S_hat;
    key[2] = row.S_hat ? row.Y_hat : 0.0;
    key[3] = 1.0;
    for (std::size_t j = 1; j < kx; ++j) key[3 + j] = column_value(panel, row, spec.x_columns[j - 1]);
    key[3 + kx] = 1.0;
    for (std::size_t j = 1; j < kz; ++j) key[3 + kx + j] = column_value(panel, row, spec.z_columns[j - 1]);
  };

  std::map<std::vector<double>, int> index;
  std::vector<std::string> cluster_labels;
  for (std::size_t i : rows) {
    const auto& row = panel.rows[i];
    fill_key(row);
    for (std::size_t j = 3; j < key.size(); ++j) {
      if (std::isnan(key[j])) {
        const std::string name = j < 3 + kx ? d.x_names[j - 3] : d.z_names[j - 3 - kx];
        throw ValidationError("missing value of '" + name + "' for subject '" + row.subject_id + "'");
      }
    }
    if (row.S_hat != 0 && row.S_hat != 1) throw ValidationError("S_hat must be 0 or 1");
    if (row.S_hat && std::isnan(row.Y_hat)) throw ValidationError("missing outcome for a respondent");
    if (row.S_hat && spec.outcome_kind == OutcomeKind::binary && row.Y_hat != 0.0 && row.Y_hat != 1.0) {
      throw ValidationError("binary outcome takes value " + format_double(row.Y_hat) + " for subject '" +
                            row.subject_id + "'");
    }
    const double w = unit_weights ? 1.0 : weight_col ? row.covariates[*weight_col] : row.weight;
    if (!(w > 0) || !std::isfinite(w)) throw ValidationError("weights must be positive and finite");
    index.try_emplace(key, 0);
    d.panel_row.push_back(i);
    d.weight_of_row.push_back(w);
    cluster_labels.push_back(row.cluster_id);
  }
  // Pattern ids follow the sorted key order, so they do not depend on row order.
  int next = 0;
  for (auto& [k, id] : index) id = next++;
  d.x.resize(next, static_cast<Eigen::Index>(kx));
  d.z.resize(next, static_cast<Eigen::Index>(kz));
  d.y.resize(next);
  d.s.resize(next);
  d.group.resize(next);
  for (const auto& [k, id] : index) {
    d.group[id] = static_cast<int>(k[0]);
    d.s(id) = k[1];
    d.y(id) = k[2];
    for (std::size_t j = 0; j < kx; ++j) d.x(id, j) = k[3 + j];
    for (std::size_t j = 0; j < kz; ++j) d.z(id, j) = k[3 + kx + j];
  }
  d.pattern_of_row.reserve(rows.size());
  for (std::size_t i : rows) {
    fill_key(panel.rows[i]);
    d.pattern_of_row.push_back(index.at(key));
  }
  d.w = d.reweight(std::vector<double>(rows.size(), 1.0));
  const auto clusters = index_clusters(cluster_labels);
  d.cluster_of_row = clusters.of_row;
  d.n_clusters = clusters.count;

  // Per-group rank checks on the selection equation (all rows) and the
  // outcome equation (selected rows).
  for (int g = 0; g < d.n_groups; ++g) {
    Eigen::VectorXd wz = Eigen::VectorXd::Zero(d.patterns()), wx = wz;
    for (Eigen::Index p = 0; p < d.patterns(); ++p) {
      if (d.group[p] != g) continue;
      wz(p) = d.w(p);
      if (d.s(p) == 1.0) wx(p) = d.w(p);
    }
    const std::string label = d.n_groups > 1 ? d.group_labels[g] : "";
    if (wz.sum() == 0) throw ValidationError("group " + d.group_labels[g] + " has no rows");
    if (wx.sum() == 0) throw ValidationError("no respondents" + (label.empty() ? "" : " in group " + label));
    check_rank(d.z, wz / wz.sum(), d.z_names, "selection", label);
    check_rank(d.x, wx / wx.sum(), d.x_names, "outcome", label);
  }
  return d;
}

}  // namespace reqiv
