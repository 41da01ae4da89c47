#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "reqiv/panel.hpp"
#include "reqiv/selectmod.hpp"

namespace reqiv {

enum class DecompSe { bootstrap, delta, none };
std::string to_string(DecompSe m);
DecompSe parse_decomp_se(const std::string& s);

struct DecompOptions {
  // Group whose sample and coefficients anchor the counterfactuals. Empty:
  // the second of the fit's group labels.
  std::string reference_group;
  // Outcome columns left out of the itemized terms; they, and the intercept,
  // only reach the residual. An entry "term" also covers every "term=..."
  // column.
  std::vector<std::string> excluded;
  DecompSe se_method = DecompSe::bootstrap;
  std::optional<int> replicates;         // 200 when unset
  std::optional<std::uint64_t> seed;     // derived from the fit's seed when unset
  int threads = 0;
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

struct CovariateTerm {
  std::string name;
  Estimate mean_comparison;
  Estimate mean_reference;
  Estimate beta_comparison;
  Estimate beta_reference;
  Estimate delta_x;       // mean shift of this column alone
  Estimate delta_beta_x;  // coefficient swap of this column alone
};

struct DecompositionResult {
  std::string comparison_group;
  std::string reference_group;
  Estimate mean_comparison;  // average link(X beta_m) over the comparison sample
  Estimate mean_reference;
  Estimate total_gap;
  std::vector<CovariateTerm> per_covariate;
  Estimate delta_X;
  Estimate delta_beta;
  Estimate delta_R;  // total_gap - delta_X - delta_beta
  Estimate rho_comparison;
  Estimate rho_reference;
  double loglik_comparison = 0.0;
  double loglik_reference = 0.0;
  double loglik = 0.0;
  std::size_t n_comparison = 0;
  std::size_t n_reference = 0;
  std::vector<std::string> excluded_columns;  // as matched in the fit
  std::string se_method;
  int replicates = 0;
  int failed_replicates = 0;
  std::vector<std::string> warnings;
};

// Nonlinear Oaxaca-Blinder-Kitagawa split of a two-group gap. `fit` must be
// a grouped fit (spec.group_column set, two groups); `panel` supplies the
// rows it was estimated on. Means use the fit's row weights.
DecompositionResult decompose(const SelectionFit& fit, const Panel& panel, const DecompOptions& options = {});

// Just the overall gap, comparison minus reference, with its SE.
Estimate gap(const SelectionFit& fit, const Panel& panel, const DecompOptions& options = {});

// Delimited report: section, variable, comparison, comparison_se, reference,
// reference_se, contribution, contribution_se.
void write_decomposition(std::ostream& out, const DecompositionResult& r);

}  // namespace reqiv
