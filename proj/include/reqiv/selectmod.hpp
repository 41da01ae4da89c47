#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "reqiv/design.hpp"
#include "reqiv/panel.hpp"

namespace reqiv {

enum class FitMethod { probit, heckprobit, heckman_fiml, heckman_twostep };
enum class Link { probit, identity };

std::string to_string(FitMethod m);
FitMethod parse_fit_method(const std::string& s);

// Parameters are stored on the estimation scale:
//   [beta (kx per group), alpha (kz per group), atanh(rho) per group when rho
//    is free, log(sigma) per group for continuous outcomes]
// The plain probit method fits the outcome equation alone on respondents and
// has no alpha block.
struct SelectionFit {
  ModelSpec spec;
  FitMethod method = FitMethod::heckprobit;
  Link link = Link::probit;

  std::vector<std::string> group_labels;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  std::vector<std::string> param_names;

  Eigen::VectorXd theta;
  Eigen::MatrixXd vcov;  // on theta
  Eigen::VectorXd se;

  Eigen::MatrixXd beta;   // kx x groups
  Eigen::MatrixXd alpha;  // kz x groups (empty for probit)
  Eigen::VectorXd rho;    // per group; the constraint value when fixed
  Eigen::VectorXd sigma;  // per group; 1 for binary

  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
  std::string variance_method;
  std::size_t n_rows = 0;
  std::size_t n_selected_rows = 0;
  int n_clusters = 0;
  int bootstrap_failures = 0;

  int n_groups() const { return static_cast<int>(group_labels.size()); }
  int kx() const { return static_cast<int>(x_names.size()); }
  int kz() const { return static_cast<int>(z_names.size()); }
  bool rho_free() const;
  bool has_sigma() const;
  int beta_index(int g, int j) const { return g * kx() + j; }
  int alpha_index(int g, int j) const { return n_groups() * kx() + g * kz() + j; }
  int eta_index(int g) const;        // -1 when rho is fixed
  int log_sigma_index(int g) const;  // -1 for binary outcomes
  int group_index(const std::string& label) const;
};

// Probit-with-selection FIML for binary outcomes.
SelectionFit fit_heckprobit(const Panel& panel, const ModelSpec& spec);
// Heckman selection model FIML for continuous outcomes.
SelectionFit fit_heckman_fiml(const Panel& panel, const ModelSpec& spec);
// Probit selection step followed by least squares of the outcome on X and the
// inverse Mills ratio among respondents; cluster bootstrap variance. For
// binary outcomes the second step is a linear probability model, so the
// population mean uses the identity link.
SelectionFit fit_heckman_twostep(const Panel& panel, const ModelSpec& spec);
// Probit (binary) or least squares (continuous) of the outcome on X among
// respondents, ignoring selection.
SelectionFit fit_outcome_only(const Panel& panel, const ModelSpec& spec);

SelectionFit fit_selection(const Panel& panel, const ModelSpec& spec, FitMethod method);
// FIML for the spec's outcome kind.
SelectionFit fit_fiml(const Panel& panel, const ModelSpec& spec);

// Re-estimates `fit` with pattern weights `w` (same design), starting from
// fit.theta. Used by the cluster bootstrap. Returns NaN on failure.
Eigen::VectorXd refit_theta(const Design& design, const SelectionFit& fit, const Eigen::VectorXd& w);

// Per-pattern log-likelihood and per-unit-weight scores at theta.
double pattern_loglik(const Design& design, const SelectionFit& layout, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& w, Eigen::VectorXd* gradient, Eigen::MatrixXd* pattern_scores);

// Total weighted log-likelihood of a model at arbitrary parameters.
SelectionFit layout_for(const Design& design, const ModelSpec& spec, FitMethod method);

enum class MeanTarget { corrected, respondent_only };

struct MeanEstimate {
  double estimate = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

// Weighted average of link(X beta_g) over the fit's estimation sample for one
// group (or all rows when `group` is empty). respondent_only restricts to
// each subject-term's final row when it has responded. SE by the delta method
// through the fit's vcov.
MeanEstimate population_mean(const SelectionFit& fit, const Panel& panel, MeanTarget target = MeanTarget::corrected,
                             const std::string& group = "");

// Mean of link(X beta_g) over pattern weights w for one group (all groups
// when g < 0), and its gradient with respect to theta.
double pattern_mean(const Design& design, const SelectionFit& fit, const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& w, int g, Eigen::VectorXd* gradient = nullptr);

struct SelectionBiasTest {
  double difference = 0.0;  // uncorrected minus corrected population mean
  double se = 0.0;
  double p_value = 1.0;
  int replicates = 0;
  int failed = 0;
};

// Bootstrap test that the two fits imply the same population mean; both
// models are re-estimated on every cluster resample.
SelectionBiasTest test_selection_bias(const SelectionFit& corrected, const SelectionFit& uncorrected,
                                      const Panel& panel, const std::string& group = "");

// Wald test of R theta = 0 for the listed parameter indices.
struct WaldTest {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};
WaldTest wald_test(const SelectionFit& fit, const std::vector<int>& indices);
double chi_square_upper(double x, int df);

}  // namespace reqiv
