#include "likelihood.hpp"

#include <cmath>

#include "reqiv/normal.hpp"

namespace reqiv::detail {

double loglik_core(const Design& d, const Eigen::VectorXd& y, const SelectionFit& f, const Eigen::VectorXd& theta,
                   const Eigen::VectorXd& w, Eigen::VectorXd* gradient, Eigen::MatrixXd* scores) {
  const int kx = f.kx(), kz = f.kz();
  const Eigen::Index k = theta.size();
  if (gradient) gradient->setZero(k);
  if (scores) scores->setZero(d.patterns(), k);
  const bool binary = f.spec.outcome_kind == OutcomeKind::binary;
  const bool outcome_only = f.method == FitMethod::probit;
  double total = 0.0;
  Eigen::VectorXd gp(k);

  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    const double wp = w(p);
    if (wp == 0.0) continue;
    const int g = d.group[p];
    const bool selected = d.s(p) == 1.0;
    if (outcome_only && !selected) continue;
    const double xb = d.x.row(p).dot(theta.segment(f.beta_index(g, 0), kx));
    const double za = outcome_only ? 0.0 : d.z.row(p).dot(theta.segment(f.alpha_index(g, 0), kz));
    const int ie = f.eta_index(g);
    const int is = f.log_sigma_index(g);
    const double rho = ie >= 0 ? std::tanh(theta(ie)) : f.rho(g);
    double l = 0.0, gxb = 0.0, gza = 0.0, grho = 0.0, glogs = 0.0;

    if (!selected) {
      l = log_normal_cdf(-za);
      gza = -inverse_mills(-za);
    } else if (binary) {
      const double q = 2.0 * y(p) - 1.0;
      const double a = q * xb;
      if (outcome_only) {
        l = log_normal_cdf(a);
        gxb = q * inverse_mills(a);
      } else {
        const double r = q * rho;
        const double sd = std::sqrt(1.0 - r * r);
        double prob = bivariate_normal_cdf(a, za, r);
        prob = std::max(prob, 1e-300);
        l = std::log(prob);
        gxb = q * normal_pdf(a) * normal_cdf((za - r * a) / sd) / prob;
        gza = normal_pdf(za) * normal_cdf((a - r * za) / sd) / prob;
        grho = q * bivariate_normal_pdf(a, za, r) / prob;
      }
    } else {
      const double sigma = std::exp(theta(is));
      const double r = (y(p) - xb) / sigma;
      if (outcome_only) {
        l = -theta(is) + log_normal_pdf(r);
        gxb = r / sigma;
        glogs = -1.0 + r * r;
      } else {
        const double sq = std::sqrt(1.0 - rho * rho);
        const double big_a = (za + rho * r) / sq;
        const double lam = inverse_mills(big_a);
        l = -theta(is) + log_normal_pdf(r) + log_normal_cdf(big_a);
        gxb = (r - lam * rho / sq) / sigma;
        gza = lam / sq;
        glogs = -1.0 + r * r - lam * rho * r / sq;
        grho = lam * (r + rho * za) / (sq * sq * sq);
      }
    }
    total += wp * l;
    if (!gradient && !scores) continue;
    gp.setZero();
    gp.segment(f.beta_index(g, 0), kx) = gxb * d.x.row(p).transpose();
    if (!outcome_only) gp.segment(f.alpha_index(g, 0), kz) = gza * d.z.row(p).transpose();
    if (ie >= 0) gp(ie) = grho * (1.0 - rho * rho);
    if (is >= 0) gp(is) = glogs;
    if (gradient) *gradient += wp * gp;
    if (scores) scores->row(p) = gp.transpose();
  }
  return total;
}

ProbitResult grouped_probit(const Eigen::MatrixXd& m, const Eigen::VectorXd& outcome, const Eigen::VectorXd& w,
                            const std::vector<int>& group, int n_groups, const std::vector<bool>& mask,
                            const Eigen::VectorXd& start, const OptimizerSettings& settings) {
  const Eigen::Index k = m.cols();
  double total_w = 0.0;
  for (Eigen::Index p = 0; p < m.rows(); ++p) {
    if (mask[p]) total_w += w(p);
  }
  if (total_w <= 0) total_w = 1.0;
  auto objective = [&](const Eigen::VectorXd& b, Eigen::VectorXd* grad) {
    double ll = 0.0;
    if (grad) grad->setZero(b.size());
    for (Eigen::Index p = 0; p < m.rows(); ++p) {
      if (!mask[p] || w(p) == 0.0) continue;
      const auto seg = b.segment(group[p] * k, k);
      const double q = 2.0 * outcome(p) - 1.0;
      const double xb = q * m.row(p).dot(seg);
      ll += w(p) * log_normal_cdf(xb);
      if (grad) grad->segment(group[p] * k, k) += w(p) * q * inverse_mills(xb) * m.row(p).transpose();
    }
    if (grad) *grad /= total_w;
    return ll / total_w;
  };
  const auto res = maximize(objective, start.size() ? start : Eigen::VectorXd::Zero(k * n_groups), settings);
  return {res.argmax, res.converged};
}

}  // namespace reqiv::detail
