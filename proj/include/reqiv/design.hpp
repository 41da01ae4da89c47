#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "reqiv/optimize.hpp"
#include "reqiv/panel.hpp"
#include "reqiv/variance.hpp"

namespace reqiv {

enum class OutcomeKind { binary, continuous };
enum class SampleRule { all_rows, final_request_only };

std::string to_string(OutcomeKind k);
std::string to_string(SampleRule r);
OutcomeKind parse_outcome_kind(const std::string& s);
SampleRule parse_sample_rule(const std::string& s);

// Column terms understood in x_columns / z_columns:
//   name        a covariate of the panel
//   R, t        the request count or period as numbers
//   R=k, R>=k   request indicators
//   term=id     term indicator
//   a:b         product of two or more terms
// Both equations always carry an intercept.
struct ModelSpec {
  OutcomeKind outcome_kind = OutcomeKind::binary;
  std::vector<std::string> x_columns;
  std::vector<std::string> z_columns;
  std::optional<double> rho_constraint;  // nullopt: free
  std::string weight_column = "weight";  // "none" for unit weights
  VarianceSpec variance;
  SampleRule sample_rule = SampleRule::all_rows;
  // Fit separate (beta, alpha, rho, sigma) per value of this covariate.
  std::string group_column;
  int min_request = 1;  // rows with R below this are left out (t = 0 rows)
  int max_request = 0;  // 0: no upper limit
  OptimizerSettings optimizer;

  // Throws ValidationError; checks identification when rho is free.
  void validate() const;
};

// Evaluates one column term on a panel row.
double column_value(const Panel& panel, const PanelRow& row, const std::string& term);
// Throws ValidationError if the term cannot be evaluated on this panel.
void check_column(const Panel& panel, const std::string& term);

// Estimation data compressed to distinct patterns of (group, S_hat, outcome,
// X row, Z row). Pattern weights are summed row weights; per-row quantities
// are recovered through pattern_of_row.
struct Design {
  Eigen::MatrixXd x;  // patterns x kx
  Eigen::MatrixXd z;  // patterns x kz
  Eigen::VectorXd y;  // outcome for selected patterns, 0 otherwise
  Eigen::VectorXd s;  // S_hat
  Eigen::VectorXd w;  // summed weight
  std::vector<int> group;

  std::vector<std::size_t> panel_row;  // estimation rows, in panel order
  std::vector<int> pattern_of_row;
  std::vector<double> weight_of_row;
  std::vector<int> cluster_of_row;
  int n_clusters = 0;

  std::vector<std::string> group_labels;
  std::vector<std::string> x_names;  // "(intercept)" first
  std::vector<std::string> z_names;
  int n_groups = 1;

  Eigen::Index patterns() const { return x.rows(); }
  // Pattern weights after scaling each estimation row by `multiplicity`
  // (indexed like panel_row).
  Eigen::VectorXd reweight(const std::vector<double>& multiplicity) const;
};

// Applies the sample rule and request limits, evaluates columns, and checks
// that outcomes fit the outcome kind.
Design build_design(const Panel& panel, const ModelSpec& spec);

// Sorted distinct values of the group column formatted as text; a single
// "all" group when no column is given.
std::vector<std::string> group_labels(const Panel& panel, const std::string& group_column);

}  // namespace reqiv
