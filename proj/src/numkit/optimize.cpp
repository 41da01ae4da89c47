#include "reqiv/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "reqiv/error.hpp"

namespace reqiv {

void OptimizerSettings::validate() const {
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!(gradient_tolerance > 0) || !(objective_rel_tolerance > 0) || !(finite_difference_step > 0)) {
    throw std::invalid_argument("optimizer tolerances must be strictly positive");
  }
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Minimization view of the objective.
struct Minimand {
  const SmoothObjective& f;
  int evaluations = 0;

  double operator()(const VectorXd& x, VectorXd& g) {
    ++evaluations;
    const double v = f(x, &g);
    g = -g;
    return -v;
  }
};

struct LinePoint {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;
  VectorXd gradient;
};

double cubic_step(const LinePoint& a, const LinePoint& b) {
  const double lo = std::min(a.step, b.step);
  const double hi = std::max(a.step, b.step);
  const double d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
  const double disc = d1 * d1 - a.slope * b.slope;
  double t = 0.5 * (lo + hi);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b.step - a.step);
    const double cand =
        b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if (std::isfinite(cand)) t = cand;
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

// Strong-Wolfe line search (bracketing then zoom). Returns false when no
// acceptable point was found.
bool line_search(Minimand& phi, const VectorXd& x, const VectorXd& dir, const LinePoint& origin,
                 double initial_step, LinePoint& out) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  VectorXd g(x.size());

  auto evaluate = [&](double step, LinePoint& p) {
    p.step = step;
    p.value = phi(x + step * dir, g);
    p.gradient = g;
    p.slope = g.dot(dir);
    return std::isfinite(p.value) && p.gradient.allFinite();
  };

  auto zoom = [&](LinePoint lo, LinePoint hi) {
    for (int i = 0; i < 40; ++i) {
      LinePoint trial;
      const double step = cubic_step(lo, hi);
      if (!evaluate(step, trial)) {
        hi = trial;
        hi.value = std::numeric_limits<double>::infinity();
        hi.slope = 0.0;
        continue;
      }
      if (trial.value > origin.value + c1 * step * origin.slope || trial.value >= lo.value) {
        hi = trial;
      } else {
        if (std::abs(trial.slope) <= -c2 * origin.slope) {
          out = trial;
          return true;
        }
        if (trial.slope * (hi.step - lo.step) >= 0) hi = lo;
        lo = trial;
      }
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, lo.step)) break;
    }
    if (lo.step > 0 && lo.value < origin.value) {
      out = lo;
      return true;
    }
    return false;
  };

  LinePoint prev = origin;
  double step = initial_step;
  for (int i = 0; i < 60; ++i) {
    LinePoint cur;
    if (!evaluate(step, cur)) {
      // Shrink toward the last finite point.
      step = prev.step + 0.5 * (step - prev.step);
      if (step - prev.step < 1e-20) break;
      continue;
    }
    if (cur.value > origin.value + c1 * step * origin.slope || (i > 0 && cur.value >= prev.value)) {
      return zoom(prev, cur);
    }
    if (std::abs(cur.slope) <= -c2 * origin.slope) {
      out = cur;
      return true;
    }
    if (cur.slope >= 0) return zoom(cur, prev);
    prev = cur;
    step *= 2.0;
  }
  return false;
}

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

MaximizeResult maximize(const SmoothObjective& objective, const VectorXd& start,
                        const OptimizerSettings& settings) {
  settings.validate();
  const auto n = start.size();
  Minimand phi{objective};

  MaximizeResult result;
  VectorXd x = start;
  VectorXd g(n);
  double f = phi(x, g);
  if (!std::isfinite(f) || !g.allFinite()) {
    throw EstimationError("objective is not finite at the starting point");
  }

  MatrixXd inv_hessian = MatrixXd::Identity(n, n);
  bool scaled = false;
  bool by_objective = false;
  int iter = 0;
  std::string message = "iteration limit reached";

  for (; iter < settings.max_iterations; ++iter) {
    if (inf_norm(g) <= settings.gradient_tolerance) {
      message = "gradient tolerance met";
      break;
    }
    VectorXd dir = -inv_hessian * g;
    if (!(dir.dot(g) < 0)) {
      inv_hessian.setIdentity();
      scaled = false;
      dir = -g;
    }
    const double initial = scaled ? 1.0 : std::min(1.0, 1.0 / inf_norm(g));
    LinePoint origin{0.0, f, g.dot(dir), g};
    LinePoint next;
    if (!line_search(phi, x, dir, origin, initial, next)) {
      if (scaled) {
        inv_hessian.setIdentity();
        scaled = false;
        continue;
      }
      message = "line search failed";
      break;
    }
    const VectorXd s = next.step * dir;
    const VectorXd y = next.gradient - g;
    const double ys = y.dot(s);
    if (!scaled && ys > 0) {
      inv_hessian *= ys / y.squaredNorm();
      scaled = true;
    }
    if (ys > 1e-12 * s.norm() * y.norm()) {
      const double r = 1.0 / ys;
      const MatrixXd left = MatrixXd::Identity(n, n) - r * s * y.transpose();
      inv_hessian = left * inv_hessian * left.transpose() + r * s * s.transpose();
    }
    const double change = std::abs(next.value - f);
    x += s;
    f = next.value;
    g = next.gradient;
    if (change <= settings.objective_rel_tolerance * std::max(1.0, std::abs(f))) {
      by_objective = true;
      message = "relative objective tolerance met";
      ++iter;
      break;
    }
  }
  bool converged = inf_norm(g) <= settings.gradient_tolerance || by_objective;

  // Newton refinement on the finite-difference Hessian.
  const double h = settings.finite_difference_step;
  SmoothObjective negated = [&](const VectorXd& p, VectorXd* grad) {
    const double v = objective(p, grad);
    if (grad) *grad = -*grad;
    return -v;
  };
  MatrixXd hess = hessian_from_gradient(negated, x, h);
  if (converged && hess.allFinite()) {
    Eigen::LLT<MatrixXd> llt(hess);
    if (llt.info() == Eigen::Success) {
      for (int k = 0; k < 8 && inf_norm(g) > 1e-3 * settings.gradient_tolerance; ++k) {
        const VectorXd trial = x - llt.solve(g);
        VectorXd gt(n);
        const double ft = phi(trial, gt);
        if (!std::isfinite(ft) || !gt.allFinite() || inf_norm(gt) >= inf_norm(g) ||
            ft > f + 1e-12 * std::max(1.0, std::abs(f))) {
          break;
        }
        x = trial;
        f = ft;
        g = gt;
      }
      hess = hessian_from_gradient(negated, x, h);
    }
  }
  converged = converged || inf_norm(g) <= settings.gradient_tolerance;

  result.argmax = x;
  result.value = -f;
  result.gradient = -g;
  result.hessian = -hess;
  result.iterations = iter;
  result.converged = converged;
  result.message = message;
  Eigen::LLT<MatrixXd> llt(hess);
  result.hessian_negative_definite = hess.allFinite() && llt.info() == Eigen::Success;
  if (result.hessian_negative_definite) {
    result.curvature = llt.solve(MatrixXd::Identity(n, n));
  } else {
    result.curvature = hess.completeOrthogonalDecomposition().pseudoInverse();
  }
  return result;
}

SmoothObjective with_numeric_gradient(std::function<double(const VectorXd&)> f, double step) {
  return [f = std::move(f), step](const VectorXd& x, VectorXd* grad) {
    if (grad) *grad = central_difference_gradient(f, x, step);
    return f(x);
  };
}

VectorXd central_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                     const VectorXd& x, double step) {
  VectorXd g(x.size());
  VectorXd p = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    p[j] = x[j] + h;
    const double up = f(p);
    p[j] = x[j] - h;
    const double down = f(p);
    p[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

MatrixXd hessian_from_gradient(const SmoothObjective& objective, const VectorXd& x, double step) {
  const auto n = x.size();
  MatrixXd hess(n, n);
  VectorXd p = x;
  VectorXd up(n), down(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    p[j] = x[j] + h;
    objective(p, &up);
    p[j] = x[j] - h;
    objective(p, &down);
    p[j] = x[j];
    hess.col(j) = (up - down) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

double gradient_check(const SmoothObjective& objective, const VectorXd& point, double step) {
  VectorXd analytic(point.size());
  objective(point, &analytic);
  const VectorXd numeric = central_difference_gradient(
      [&](const VectorXd& p) { return objective(p, nullptr); }, point, step);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < point.size(); ++j) {
    worst = std::max(worst, std::abs(analytic[j] - numeric[j]) / (1.0 + std::abs(numeric[j])));
  }
  return worst;
}

}  // namespace reqiv
