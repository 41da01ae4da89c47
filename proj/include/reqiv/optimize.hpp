#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace reqiv {

struct OptimizerSettings {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;        // inf-norm
  double objective_rel_tolerance = 1e-10;
  double finite_difference_step = 1e-5;

  // Throws std::invalid_argument on non-positive tolerances or iterations.
  void validate() const;
};

// Returns the objective at x and, when `gradient` is non-null, writes the
// gradient into it.
using SmoothObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* gradient)>;

struct MaximizeResult {
  Eigen::VectorXd argmax;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;     // finite differences of the gradient at argmax
  Eigen::MatrixXd curvature;   // -hessian^{-1}; asymptotic covariance of a log-likelihood maximizer
  bool converged = false;
  bool hessian_negative_definite = false;
  int iterations = 0;
  std::string message;
};

// Quasi-Newton (BFGS) maximizer with a strong-Wolfe line search using cubic
// interpolation, finished by Newton steps on a finite-difference Hessian.
// Non-convergence is reported through `converged` and `message`. Throws
// EstimationError if the objective is not finite at `start` or no finite
// step exists.
MaximizeResult maximize(const SmoothObjective& objective, const Eigen::VectorXd& start,
                        const OptimizerSettings& settings = {});

// Wraps a value-only function with central-difference gradients.
SmoothObjective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f,
                                      double step = 1e-6);

Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double step);

// Symmetrized central differences of the analytic gradient.
Eigen::MatrixXd hessian_from_gradient(const SmoothObjective& objective, const Eigen::VectorXd& x,
                                      double step);

// max_j |analytic_j - numeric_j| / (1 + |numeric_j|) with central differences
// of the given step, scaled by max(1, |x_j|).
double gradient_check(const SmoothObjective& objective, const Eigen::VectorXd& point,
                      double step = 1e-5);

}  // namespace reqiv
