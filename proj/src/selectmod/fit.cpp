#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "likelihood.hpp"
#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/normal.hpp"
#include "reqiv/selectmod.hpp"

namespace reqiv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool uses_selection(FitMethod m) { return m != FitMethod::probit; }

// Per-group weighted least squares of y on m over masked patterns.
bool grouped_wls(const Eigen::MatrixXd& m, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                 const std::vector<int>& group, int n_groups, const std::vector<bool>& mask, Eigen::VectorXd& coef) {
  const Eigen::Index k = m.cols();
  coef.resize(k * n_groups);
  for (int g = 0; g < n_groups; ++g) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (Eigen::Index p = 0; p < m.rows(); ++p) {
      if (!mask[p] || group[p] != g || w(p) == 0.0) continue;
      a.noalias() += w(p) * m.row(p).transpose() * m.row(p);
      b.noalias() += w(p) * y(p) * m.row(p).transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-12 * a.diagonal().maxCoeff()).all()) {
      return false;
    }
    coef.segment(g * k, k) = ldlt.solve(b);
  }
  return coef.allFinite();
}

std::vector<bool> selected_mask(const Design& d) {
  std::vector<bool> mask(d.patterns());
  for (Eigen::Index p = 0; p < d.patterns(); ++p) mask[p] = d.s(p) == 1.0;
  return mask;
}

// Weighted sd of the outcome among selected patterns; the scale used to
// condition continuous likelihoods.
double outcome_scale(const Design& d, const Eigen::VectorXd& w) {
  double sw = 0, s1 = 0, s2 = 0;
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    if (d.s(p) != 1.0) continue;
    sw += w(p);
    s1 += w(p) * d.y(p);
  }
  const double mean = s1 / sw;
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    if (d.s(p) == 1.0) s2 += w(p) * (d.y(p) - mean) * (d.y(p) - mean);
  }
  return std::sqrt(s2 / sw);
}

void check_separation(const Design& d, const ModelSpec& spec) {
  for (int g = 0; g < d.n_groups; ++g) {
    const std::string where = d.n_groups > 1 ? " in group " + d.group_labels[g] : "";
    if (spec.outcome_kind == OutcomeKind::binary) {
      double ones = 0, zeros = 0;
      for (Eigen::Index p = 0; p < d.patterns(); ++p) {
        if (d.group[p] != g || d.s(p) != 1.0) continue;
        (d.y(p) == 1.0 ? ones : zeros) += d.w(p);
      }
      if (ones == 0 || zeros == 0) {
        throw ValidationError("perfect separation: respondent outcomes are all " +
                              std::string(ones == 0 ? "0" : "1") + where);
      }
    }
    for (Eigen::Index j = 1; j < d.z.cols(); ++j) {
      bool indicator = true;
      for (Eigen::Index p = 0; p < d.patterns() && indicator; ++p) {
        indicator = d.z(p, j) == 0.0 || d.z(p, j) == 1.0;
      }
      if (!indicator) continue;
      double sel = 0, unsel = 0, y1 = 0, y0 = 0;
      for (Eigen::Index p = 0; p < d.patterns(); ++p) {
        if (d.group[p] != g || d.z(p, j) != 1.0) continue;
        if (d.s(p) == 1.0) {
          sel += d.w(p);
          (d.y(p) == 1.0 ? y1 : y0) += d.w(p);
        } else {
          unsel += d.w(p);
        }
      }
      if (sel + unsel == 0) continue;
      if (sel == 0 || unsel == 0) {
        throw ValidationError("perfect separation: response is constant where '" + d.z_names[j] + "' = 1" + where);
      }
      if (spec.outcome_kind == OutcomeKind::binary && (y1 == 0 || y0 == 0)) {
        throw ValidationError("perfect separation: respondent outcome cell is empty where '" + d.z_names[j] +
                              "' = 1" + where);
      }
    }
  }
}

void fill_natural(SelectionFit& f) {
  const int G = f.n_groups();
  f.beta.resize(f.kx(), G);
  f.alpha.resize(uses_selection(f.method) ? f.kz() : 0, G);
  for (int g = 0; g < G; ++g) {
    for (int j = 0; j < f.kx(); ++j) f.beta(j, g) = f.theta(f.beta_index(g, j));
    for (int j = 0; j < f.alpha.rows(); ++j) f.alpha(j, g) = f.theta(f.alpha_index(g, j));
    if (f.eta_index(g) >= 0) f.rho(g) = std::tanh(f.theta(f.eta_index(g)));
    f.sigma(g) = f.log_sigma_index(g) >= 0 ? std::exp(f.theta(f.log_sigma_index(g))) : 1.0;
  }
  f.se = f.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

struct MlEstimate {
  Eigen::VectorXd theta;
  Eigen::MatrixXd bread;  // inverse negative Hessian of the weighted sum
  bool converged = false;
  bool negative_definite = false;
  int iterations = 0;
  std::string message;
};

// Maximizes the weighted mean log-likelihood; continuous outcomes are divided
// by their respondent sd during the search and mapped back afterwards.
MlEstimate estimate_ml(const Design& d, const SelectionFit& f, const Eigen::VectorXd& w, const Eigen::VectorXd& start,
                       bool allow_restarts, bool need_bread) {
  const bool scaled = f.has_sigma();
  const double scale = scaled ? outcome_scale(d, w) : 1.0;
  if (scaled && !(scale > 0)) throw ValidationError("zero residual variance among respondents");
  const Eigen::VectorXd y = d.y / scale;
  // theta = D theta_scaled + shift: beta * scale, log sigma + log scale.
  Eigen::VectorXd dscale = Eigen::VectorXd::Ones(start.size());
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(start.size());
  if (scaled) {
    for (int g = 0; g < f.n_groups(); ++g) {
      for (int j = 0; j < f.kx(); ++j) dscale(f.beta_index(g, j)) = scale;
      shift(f.log_sigma_index(g)) = std::log(scale);
    }
  }
  const double total_w = w.sum();
  auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
    const double v = detail::loglik_core(d, y, f, th, w, grad, nullptr);
    if (grad) *grad /= total_w;
    return v / total_w;
  };
  const Eigen::VectorXd s0 = (start - shift).cwiseQuotient(dscale);

  auto run = [&](const Eigen::VectorXd& s) { return maximize(objective, s, f.spec.optimizer); };
  MaximizeResult best = run(s0);
  bool acceptable = best.converged && best.hessian_negative_definite;
  if (allow_restarts && !acceptable && f.rho_free()) {
    for (double eta : {0.5, -0.5, 1.5, -1.5}) {
      Eigen::VectorXd s = s0;
      for (int g = 0; g < f.n_groups(); ++g) s(f.eta_index(g)) = eta;
      MaximizeResult r;
      try {
        r = run(s);
      } catch (const EstimationError&) {
        continue;
      }
      const bool ok = r.converged && r.hessian_negative_definite;
      if ((ok && !acceptable) || (ok == acceptable && r.value > best.value)) {
        best = r;
        acceptable = ok;
      }
    }
  }
  MlEstimate out;
  out.theta = best.argmax.cwiseProduct(dscale) + shift;
  out.converged = best.converged;
  out.negative_definite = best.hessian_negative_definite;
  out.iterations = best.iterations;
  out.message = best.message;
  if (need_bread) {
    const Eigen::MatrixXd dmat = dscale.asDiagonal();
    out.bread = dmat * best.curvature * dmat / total_w;
  }
  return out;
}

Eigen::MatrixXd cluster_scores(const Design& d, const Eigen::MatrixXd& pattern_scores) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d.n_clusters, pattern_scores.cols());
  for (std::size_t i = 0; i < d.pattern_of_row.size(); ++i) {
    c.row(d.cluster_of_row[i]) += d.weight_of_row[i] * pattern_scores.row(d.pattern_of_row[i]);
  }
  return c;
}

// Two-step estimate at pattern weights w; returns NaN on failure.
Eigen::VectorXd twostep_theta(const Design& d, const SelectionFit& f, const Eigen::VectorXd& w,
                              const Eigen::VectorXd& alpha_start) {
  const int G = f.n_groups(), kx = f.kx(), kz = f.kz();
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(f.param_names.size(), kNaN);
  const std::vector<bool> all(d.patterns(), true);
  const auto probit = detail::grouped_probit(d.z, d.s, w, d.group, G, all, alpha_start, f.spec.optimizer);
  if (!probit.converged) return theta;
  Eigen::MatrixXd m(d.patterns(), kx + 1);
  Eigen::VectorXd za(d.patterns()), lam(d.patterns());
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    za(p) = d.z.row(p).dot(probit.coef.segment(d.group[p] * kz, kz));
    lam(p) = inverse_mills(za(p));
    m.row(p) << d.x.row(p), lam(p);
  }
  const auto mask = selected_mask(d);
  Eigen::VectorXd coef;
  if (!grouped_wls(m, d.y, w, d.group, G, mask, coef)) return theta;
  for (int g = 0; g < G; ++g) {
    const Eigen::VectorXd b = coef.segment(g * (kx + 1), kx + 1);
    const double rho_sigma = b(kx);
    double sw = 0, se2 = 0, sdelta = 0;
    for (Eigen::Index p = 0; p < d.patterns(); ++p) {
      if (!mask[p] || d.group[p] != g) continue;
      const double e = d.y(p) - m.row(p).dot(b);
      sw += w(p);
      se2 += w(p) * e * e;
      sdelta += w(p) * lam(p) * (lam(p) + za(p));
    }
    const double sigma = std::sqrt(se2 / sw + rho_sigma * rho_sigma * sdelta / sw);
    const double rho = sigma > 0 ? std::clamp(rho_sigma / sigma, -1.0 + 1e-12, 1.0 - 1e-12) : 0.0;
    theta.segment(f.beta_index(g, 0), kx) = b.head(kx);
    theta(f.eta_index(g)) = std::atanh(rho);
    theta(f.log_sigma_index(g)) = std::log(sigma);
  }
  theta.segment(f.alpha_index(0, 0), G * kz) = probit.coef;
  return theta;
}

Eigen::VectorXd start_values(const Design& d, const SelectionFit& f) {
  const int G = f.n_groups(), kx = f.kx(), kz = f.kz();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(f.param_names.size());
  const auto mask = selected_mask(d);
  if (f.spec.outcome_kind == OutcomeKind::binary) {
    const auto b = detail::grouped_probit(d.x, d.y, d.w, d.group, G, mask, {}, f.spec.optimizer);
    theta.segment(0, G * kx) = b.coef;
  } else {
    Eigen::VectorXd b;
    if (!grouped_wls(d.x, d.y, d.w, d.group, G, mask, b)) throw ValidationError("outcome equation is singular");
    theta.segment(0, G * kx) = b;
    for (int g = 0; g < G; ++g) {
      double sw = 0, s2 = 0;
      for (Eigen::Index p = 0; p < d.patterns(); ++p) {
        if (!mask[p] || d.group[p] != g) continue;
        const double e = d.y(p) - d.x.row(p).dot(b.segment(g * kx, kx));
        sw += d.w(p);
        s2 += d.w(p) * e * e;
      }
      if (!(s2 > 0)) throw ValidationError("zero residual variance among respondents");
      theta(f.log_sigma_index(g)) = 0.5 * std::log(s2 / sw);
    }
  }
  if (uses_selection(f.method)) {
    const std::vector<bool> all(d.patterns(), true);
    const auto a = detail::grouped_probit(d.z, d.s, d.w, d.group, G, all, {}, f.spec.optimizer);
    theta.segment(f.alpha_index(0, 0), G * kz) = a.coef;
  }
  return theta;
}

std::vector<double> multiplicity(const Resample& rs, std::size_t n_rows) {
  std::vector<double> m(n_rows, 0.0);
  for (auto r : rs.rows) m[r] += 1.0;
  return m;
}

void bootstrap_vcov(SelectionFit& f, const Design& d) {
  VarianceSpec v = f.spec.variance;
  const auto boot = cluster_bootstrap(d.cluster_of_row, d.n_clusters, v, [&](const Resample& rs) {
    return refit_theta(d, f, d.reweight(multiplicity(rs, d.pattern_of_row.size())));
  });
  f.vcov = replicate_cov(boot.replicates);
  f.bootstrap_failures = boot.failed;
  f.variance_method = "cluster_bootstrap";
}

SelectionFit fit_ml(const Panel& panel, const ModelSpec& spec, FitMethod method) {
  const Design d = build_design(panel, spec);
  check_separation(d, spec);
  SelectionFit f = layout_for(d, spec, method);
  const Eigen::VectorXd start = start_values(d, f);

  if (method == FitMethod::probit && spec.outcome_kind == OutcomeKind::continuous) {
    // Least squares has a closed form; the ML sigma is the weighted RMS residual.
    f.theta = start;
    f.converged = true;
    Eigen::VectorXd grad;
    Eigen::MatrixXd scores;
    f.loglik = detail::loglik_core(d, d.y, f, f.theta, d.w, &grad, &scores);
    const Eigen::MatrixXd h = hessian_from_gradient(
        [&](const Eigen::VectorXd& th, Eigen::VectorXd* g) { return detail::loglik_core(d, d.y, f, th, d.w, g, nullptr); },
        f.theta, 1e-5);
    const Eigen::MatrixXd bread = (-h).inverse();
    f.vcov = cluster_sandwich(bread, cluster_scores(d, scores));
    f.variance_method = "analytic_sandwich";
  } else {
    const MlEstimate est = estimate_ml(d, f, d.w, start, true, true);
    f.theta = est.theta;
    f.converged = est.converged && est.negative_definite;
    f.iterations = est.iterations;
    f.message = est.converged && !est.negative_definite ? "Hessian is not negative definite at the optimum"
                                                        : est.message;
    Eigen::MatrixXd scores;
    Eigen::VectorXd grad;
    f.loglik = detail::loglik_core(d, d.y, f, f.theta, d.w, &grad, &scores);
    if (spec.variance.method == VarianceMethod::analytic_sandwich) {
      f.vcov = cluster_sandwich(est.bread, cluster_scores(d, scores));
      f.variance_method = "analytic_sandwich";
    } else {
      bootstrap_vcov(f, d);
    }
  }
  fill_natural(f);
  return f;
}

}  // namespace

std::string to_string(FitMethod m) {
  switch (m) {
    case FitMethod::probit: return "outcome_only";
    case FitMethod::heckprobit: return "heckprobit";
    case FitMethod::heckman_fiml: return "heckman_fiml";
    case FitMethod::heckman_twostep: return "heckman_twostep";
  }
  return "";
}

FitMethod parse_fit_method(const std::string& s) {
  if (s == "outcome_only" || s == "probit" || s == "ols") return FitMethod::probit;
  if (s == "heckprobit") return FitMethod::heckprobit;
  if (s == "heckman_fiml" || s == "heckman") return FitMethod::heckman_fiml;
  if (s == "heckman_twostep" || s == "twostep" || s == "two_step") return FitMethod::heckman_twostep;
  throw ValidationError("unknown fit method '" + s + "'");
}

bool SelectionFit::rho_free() const {
  if (method == FitMethod::heckman_twostep) return true;
  if (method == FitMethod::probit) return false;
  return !spec.rho_constraint.has_value();
}

bool SelectionFit::has_sigma() const {
  return spec.outcome_kind == OutcomeKind::continuous || method == FitMethod::heckman_twostep;
}

int SelectionFit::eta_index(int g) const {
  if (!rho_free()) return -1;
  const int base = n_groups() * kx() + (method == FitMethod::probit ? 0 : n_groups() * kz());
  return base + g;
}

int SelectionFit::log_sigma_index(int g) const {
  if (!has_sigma()) return -1;
  const int base = n_groups() * kx() + (method == FitMethod::probit ? 0 : n_groups() * kz()) +
                   (rho_free() ? n_groups() : 0);
  return base + g;
}

int SelectionFit::group_index(const std::string& label) const {
  for (int g = 0; g < n_groups(); ++g) {
    if (group_labels[g] == label) return g;
  }
  throw ValidationError("unknown group '" + label + "'");
}

SelectionFit layout_for(const Design& design, const ModelSpec& spec, FitMethod method) {
  if ((method == FitMethod::heckprobit && spec.outcome_kind != OutcomeKind::binary) ||
      (method == FitMethod::heckman_fiml && spec.outcome_kind != OutcomeKind::continuous)) {
    throw ValidationError(to_string(method) + " does not apply to " + to_string(spec.outcome_kind) + " outcomes");
  }
  SelectionFit f;
  f.spec = spec;
  f.method = method;
  f.link = spec.outcome_kind == OutcomeKind::binary && method != FitMethod::heckman_twostep ? Link::probit
                                                                                              : Link::identity;
  f.group_labels = design.group_labels;
  f.x_names = design.x_names;
  f.z_names = design.z_names;
  const int G = f.n_groups();
  auto tag = [&](const std::string& base, int g) {
    return G > 1 ? base + "[" + f.group_labels[g] + "]" : base;
  };
  for (int g = 0; g < G; ++g) {
    for (const auto& n : f.x_names) f.param_names.push_back(tag("beta", g) + ":" + n);
  }
  if (uses_selection(method)) {
    for (int g = 0; g < G; ++g) {
      for (const auto& n : f.z_names) f.param_names.push_back(tag("alpha", g) + ":" + n);
    }
  }
  f.rho = Eigen::VectorXd::Constant(G, spec.rho_constraint.value_or(0.0));
  if (method == FitMethod::probit) f.rho.setZero();
  f.sigma = Eigen::VectorXd::Ones(G);
  if (f.rho_free()) {
    for (int g = 0; g < G; ++g) f.param_names.push_back(tag("atanh_rho", g));
  }
  if (f.has_sigma()) {
    for (int g = 0; g < G; ++g) f.param_names.push_back(tag("log_sigma", g));
  }
  f.n_rows = design.panel_row.size();
  for (std::size_t i = 0; i < design.pattern_of_row.size(); ++i) {
    if (design.s(design.pattern_of_row[i]) == 1.0) ++f.n_selected_rows;
  }
  f.n_clusters = design.n_clusters;
  return f;
}

double pattern_loglik(const Design& design, const SelectionFit& layout, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& w, Eigen::VectorXd* gradient, Eigen::MatrixXd* pattern_scores) {
  return detail::loglik_core(design, design.y, layout, theta, w, gradient, pattern_scores);
}

Eigen::VectorXd refit_theta(const Design& d, const SelectionFit& f, const Eigen::VectorXd& w) {
  const Eigen::VectorXd failed = Eigen::VectorXd::Constant(f.theta.size(), kNaN);
  // Every group needs respondents and nonrespondents in the resample.
  for (int g = 0; g < f.n_groups(); ++g) {
    double sel = 0, unsel = 0;
    for (Eigen::Index p = 0; p < d.patterns(); ++p) {
      if (d.group[p] != g) continue;
      (d.s(p) == 1.0 ? sel : unsel) += w(p);
    }
    if (sel == 0 || (uses_selection(f.method) && unsel == 0)) return failed;
  }
  try {
    if (f.method == FitMethod::heckman_twostep) {
      return twostep_theta(d, f, w, f.theta.segment(f.alpha_index(0, 0), f.n_groups() * f.kz()));
    }
    if (f.method == FitMethod::probit && f.spec.outcome_kind == OutcomeKind::continuous) {
      SelectionFit copy = f;
      Eigen::VectorXd b;
      if (!grouped_wls(d.x, d.y, w, d.group, f.n_groups(), selected_mask(d), b)) return failed;
      Eigen::VectorXd th = f.theta;
      th.head(b.size()) = b;
      for (int g = 0; g < f.n_groups(); ++g) {
        double sw = 0, s2 = 0;
        for (Eigen::Index p = 0; p < d.patterns(); ++p) {
          if (d.s(p) != 1.0 || d.group[p] != g) continue;
          const double e = d.y(p) - d.x.row(p).dot(b.segment(g * f.kx(), f.kx()));
          sw += w(p);
          s2 += w(p) * e * e;
        }
        th(f.log_sigma_index(g)) = 0.5 * std::log(s2 / sw);
      }
      return th;
    }
    const MlEstimate est = estimate_ml(d, f, w, f.theta, false, false);
    if (!est.converged) return failed;
    return est.theta;
  } catch (const std::exception&) {
    return failed;
  }
}

SelectionFit fit_heckprobit(const Panel& panel, const ModelSpec& spec) {
  if (spec.outcome_kind != OutcomeKind::binary) throw ValidationError("heckprobit needs a binary outcome");
  return fit_ml(panel, spec, FitMethod::heckprobit);
}

SelectionFit fit_heckman_fiml(const Panel& panel, const ModelSpec& spec) {
  if (spec.outcome_kind != OutcomeKind::continuous) {
    throw ValidationError("Heckman FIML needs a continuous outcome");
  }
  return fit_ml(panel, spec, FitMethod::heckman_fiml);
}

SelectionFit fit_outcome_only(const Panel& panel, const ModelSpec& spec) {
  ModelSpec s = spec;
  s.rho_constraint = 0.0;  // the outcome-only fit has no selection parameters
  return fit_ml(panel, s, FitMethod::probit);
}

SelectionFit fit_heckman_twostep(const Panel& panel, const ModelSpec& spec) {
  ModelSpec s = spec;
  s.rho_constraint.reset();
  const Design d = build_design(panel, s);
  check_separation(d, s);
  SelectionFit f = layout_for(d, s, FitMethod::heckman_twostep);
  f.theta = twostep_theta(d, f, d.w, {});
  if (!f.theta.allFinite()) throw EstimationError("two-step estimation failed (selection probit or second step)");
  f.converged = true;
  f.loglik = kNaN;
  VarianceSpec v = s.variance;
  v.method = VarianceMethod::cluster_bootstrap;
  f.spec.variance = v;
  bootstrap_vcov(f, d);
  fill_natural(f);
  return f;
}

SelectionFit fit_selection(const Panel& panel, const ModelSpec& spec, FitMethod method) {
  switch (method) {
    case FitMethod::probit: return fit_outcome_only(panel, spec);
    case FitMethod::heckprobit: return fit_heckprobit(panel, spec);
    case FitMethod::heckman_fiml: return fit_heckman_fiml(panel, spec);
    case FitMethod::heckman_twostep: return fit_heckman_twostep(panel, spec);
  }
  throw ValidationError("unknown fit method");
}

SelectionFit fit_fiml(const Panel& panel, const ModelSpec& spec) {
  return spec.outcome_kind == OutcomeKind::binary ? fit_heckprobit(panel, spec) : fit_heckman_fiml(panel, spec);
}

double pattern_mean(const Design& d, const SelectionFit& f, const Eigen::VectorXd& theta, const Eigen::VectorXd& w,
                    int g, Eigen::VectorXd* gradient) {
  double sw = 0.0, sv = 0.0;
  if (gradient) gradient->setZero(theta.size());
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    if (w(p) == 0.0 || (g >= 0 && d.group[p] != g)) continue;
    const int gp = d.group[p];
    const double xb = d.x.row(p).dot(theta.segment(f.beta_index(gp, 0), f.kx()));
    sw += w(p);
    if (f.link == Link::probit) {
      sv += w(p) * normal_cdf(xb);
      if (gradient) gradient->segment(f.beta_index(gp, 0), f.kx()) += w(p) * normal_pdf(xb) * d.x.row(p).transpose();
    } else {
      sv += w(p) * xb;
      if (gradient) gradient->segment(f.beta_index(gp, 0), f.kx()) += w(p) * d.x.row(p).transpose();
    }
  }
  if (sw == 0.0) throw ValidationError("no rows for the requested group");
  if (gradient) *gradient /= sw;
  return sv / sw;
}

namespace {

// Multiplicity selecting each subject-term's final estimation row when it
// has responded.
std::vector<double> respondent_final_rows(const Design& d, const Panel& panel) {
  std::map<std::pair<std::string, std::string>, std::size_t> last;
  for (std::size_t i = 0; i < d.panel_row.size(); ++i) {
    const auto& row = panel.rows[d.panel_row[i]];
    auto [it, fresh] = last.try_emplace({row.term_id, row.subject_id}, i);
    if (!fresh && panel.rows[d.panel_row[it->second]].R < row.R) it->second = i;
  }
  std::vector<double> m(d.panel_row.size(), 0.0);
  for (const auto& [key, i] : last) {
    if (panel.rows[d.panel_row[i]].S_hat == 1) m[i] = 1.0;
  }
  return m;
}

}  // namespace

MeanEstimate population_mean(const SelectionFit& fit, const Panel& panel, MeanTarget target, const std::string& group) {
  const Design d = build_design(panel, fit.spec);
  const int g = group.empty() ? -1 : fit.group_index(group);
  const std::vector<double> mult = target == MeanTarget::corrected ? std::vector<double>(d.panel_row.size(), 1.0)
                                                                  : respondent_final_rows(d, panel);
  const Eigen::VectorXd w = d.reweight(mult);
  MeanEstimate out;
  Eigen::VectorXd grad;
  out.estimate = pattern_mean(d, fit, fit.theta, w, g, &grad);
  out.se = std::sqrt(std::max(0.0, grad.dot(fit.vcov * grad)));
  for (std::size_t i = 0; i < mult.size(); ++i) {
    if (mult[i] > 0 && (g < 0 || d.group[d.pattern_of_row[i]] == g)) ++out.n;
  }
  return out;
}

SelectionBiasTest test_selection_bias(const SelectionFit& corrected, const SelectionFit& uncorrected,
                                      const Panel& panel, const std::string& group) {
  if (corrected.x_names != uncorrected.x_names) {
    throw ValidationError("selection-bias test needs fits with the same outcome columns");
  }
  const Design dc = build_design(panel, corrected.spec);
  const Design du = build_design(panel, uncorrected.spec);
  const int gc = group.empty() ? -1 : corrected.group_index(group);
  const int gu = group.empty() ? -1 : uncorrected.group_index(group);
  SelectionBiasTest out;
  out.difference = pattern_mean(du, uncorrected, uncorrected.theta, du.w, gu) -
                   pattern_mean(dc, corrected, corrected.theta, dc.w, gc);

  std::vector<std::string> labels;
  labels.reserve(panel.rows.size());
  for (const auto& row : panel.rows) labels.push_back(row.cluster_id);
  const auto clusters = index_clusters(labels);
  const VarianceSpec v = corrected.spec.variance;
  out.replicates = v.bootstrap_replicates;
  const auto boot = cluster_bootstrap(clusters.of_row, clusters.count, v, [&](const Resample& rs) {
    std::vector<double> per_panel_row(panel.rows.size(), 0.0);
    for (auto r : rs.rows) per_panel_row[r] += 1.0;
    auto weights_for = [&](const Design& d) {
      std::vector<double> m(d.panel_row.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = per_panel_row[d.panel_row[i]];
      return d.reweight(m);
    };
    const Eigen::VectorXd wc = weights_for(dc), wu = weights_for(du);
    const Eigen::VectorXd tc = refit_theta(dc, corrected, wc);
    const Eigen::VectorXd tu = refit_theta(du, uncorrected, wu);
    if (!tc.allFinite() || !tu.allFinite()) return Eigen::VectorXd::Constant(1, kNaN);
    return Eigen::VectorXd::Constant(1, pattern_mean(du, uncorrected, tu, wu, gu) -
                                            pattern_mean(dc, corrected, tc, wc, gc));
  });
  out.failed = boot.failed;
  out.se = boot.se(0);
  if (out.difference == 0.0) {
    out.p_value = 1.0;
  } else if (!(out.se > 0)) {
    out.p_value = 0.0;
  } else {
    out.p_value = 2.0 * normal_cdf(-std::abs(out.difference) / out.se);
  }
  return out;
}

double chi_square_upper(double x, int df) {
  if (df <= 0) return 1.0;
  if (!(x > 0)) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

WaldTest wald_test(const SelectionFit& fit, const std::vector<int>& indices) {
  WaldTest t;
  t.df = static_cast<int>(indices.size());
  if (indices.empty()) return t;
  Eigen::VectorXd b(t.df);
  Eigen::MatrixXd v(t.df, t.df);
  for (int i = 0; i < t.df; ++i) {
    b(i) = fit.theta(indices[i]);
    for (int j = 0; j < t.df; ++j) v(i, j) = fit.vcov(indices[i], indices[j]);
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success) throw EstimationError("Wald test: singular covariance block");
  t.statistic = b.dot(ldlt.solve(b));
  t.p_value = chi_square_upper(t.statistic, t.df);
  return t;
}

}  // namespace reqiv
