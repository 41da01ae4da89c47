#pragma once

// Internal: per-pattern log-likelihoods shared by the selection-model fits.

#include <Eigen/Dense>

#include "reqiv/selectmod.hpp"

namespace reqiv::detail {

// Sum over patterns of w_p * l_p at theta, using outcome vector y (which may
// be a rescaled copy of design.y). Optionally returns the weighted gradient
// and the per-unit-weight score of every pattern.
double loglik_core(const Design& d, const Eigen::VectorXd& y, const SelectionFit& layout,
                   const Eigen::VectorXd& theta, const Eigen::VectorXd& w, Eigen::VectorXd* gradient,
                   Eigen::MatrixXd* scores);

// Weighted probit of `outcome` on the columns of m, with separate
// coefficients per group, restricted to patterns with mask = true.
// Returns group-stacked coefficients.
struct ProbitResult {
  Eigen::VectorXd coef;
  bool converged = false;
};
ProbitResult grouped_probit(const Eigen::MatrixXd& m, const Eigen::VectorXd& outcome, const Eigen::VectorXd& w,
                            const std::vector<int>& group, int n_groups, const std::vector<bool>& mask,
                            const Eigen::VectorXd& start, const OptimizerSettings& settings);

}  // namespace reqiv::detail
