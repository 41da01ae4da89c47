#include "reqiv/decomp.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/normal.hpp"
#include "reqiv/random.hpp"

namespace reqiv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kDefaultReplicates = 200;

std::vector<std::string> split_terms(const std::string& name) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto colon = name.find(':', start);
    parts.push_back(name.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  return parts;
}

bool excluded_by(const std::string& column, const std::string& entry) {
  if (column == entry) return true;
  for (const auto& part : split_terms(column)) {
    if (part == entry || part.rfind(entry + "=", 0) == 0) return true;
  }
  return false;
}

struct Layout {
  int gm = 0;  // comparison
  int gw = 0;  // reference
  std::vector<int> items;  // itemized x columns
};

// Statistic vector: mean_m, mean_w, total, dX, dB, dR, then per item
// xbar_m, xbar_w, dx, dbx.
constexpr int kHead = 6;

Eigen::VectorXd statistics(const Design& d, const SelectionFit& f, const Layout& lay, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd& w) {
  const int kx = f.kx();
  const int ni = static_cast<int>(lay.items.size());
  Eigen::VectorXd out = Eigen::VectorXd::Constant(kHead + 4 * ni, kNaN);
  auto link = [&](double v) { return f.link == Link::probit ? normal_cdf(v) : v; };
  const Eigen::VectorXd bm = theta.segment(f.beta_index(lay.gm, 0), kx);
  const Eigen::VectorXd bw = theta.segment(f.beta_index(lay.gw, 0), kx);

  double wm = 0.0, ww = 0.0;
  Eigen::VectorXd xm = Eigen::VectorXd::Zero(kx), xw = Eigen::VectorXd::Zero(kx);
  double mean_m = 0.0;
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    if (w(p) == 0.0) continue;
    if (d.group[p] == lay.gm) {
      wm += w(p);
      xm += w(p) * d.x.row(p).transpose();
      mean_m += w(p) * link(d.x.row(p).dot(bm));
    } else if (d.group[p] == lay.gw) {
      ww += w(p);
      xw += w(p) * d.x.row(p).transpose();
    }
  }
  if (!(wm > 0.0) || !(ww > 0.0)) return out;
  xm /= wm;
  xw /= ww;
  mean_m /= wm;

  double shift_all = 0.0;
  for (int j : lay.items) shift_all += (xm(j) - xw(j)) * bw(j);

  double mean_w = 0.0, dX = 0.0, dB = 0.0;
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(ni), dbx = Eigen::VectorXd::Zero(ni);
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    if (w(p) == 0.0 || d.group[p] != lay.gw) continue;
    const double base = d.x.row(p).dot(bw);
    const double f0 = link(base);
    double swap_all = 0.0;
    for (int k = 0; k < ni; ++k) {
      const int j = lay.items[k];
      const double swap = d.x(p, j) * (bm(j) - bw(j));
      swap_all += swap;
      dx(k) += w(p) * (link(base + (xm(j) - xw(j)) * bw(j)) - f0);
      dbx(k) += w(p) * (link(base + swap) - f0);
    }
    mean_w += w(p) * f0;
    dX += w(p) * (link(base + shift_all) - f0);
    dB += w(p) * (link(base + swap_all) - f0);
  }
  mean_w /= ww;
  dX /= ww;
  dB /= ww;
  dx /= ww;
  dbx /= ww;

  const double total = mean_m - mean_w;
  out(0) = mean_m;
  out(1) = mean_w;
  out(2) = total;
  out(3) = dX;
  out(4) = dB;
  out(5) = total - dX - dB;
  for (int k = 0; k < ni; ++k) {
    const int j = lay.items[k];
    out(kHead + 4 * k) = xm(j);
    out(kHead + 4 * k + 1) = xw(j);
    out(kHead + 4 * k + 2) = dx(k);
    out(kHead + 4 * k + 3) = dbx(k);
  }
  return out;
}

// Linearized cluster SE of a weighted mean of column j within group g.
double mean_se(const Design& d, int g, int j) {
  double sw = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < d.pattern_of_row.size(); ++i) {
    const int p = d.pattern_of_row[i];
    if (d.group[p] != g) continue;
    sw += d.weight_of_row[i];
    sx += d.weight_of_row[i] * d.x(p, j);
  }
  const double mean = sx / sw;
  std::vector<double> by_cluster(d.n_clusters, 0.0);
  std::vector<bool> seen(d.n_clusters, false);
  for (std::size_t i = 0; i < d.pattern_of_row.size(); ++i) {
    const int p = d.pattern_of_row[i];
    if (d.group[p] != g) continue;
    by_cluster[d.cluster_of_row[i]] += d.weight_of_row[i] * (d.x(p, j) - mean) / sw;
    seen[d.cluster_of_row[i]] = true;
  }
  double ss = 0.0;
  int n = 0;
  for (int c = 0; c < d.n_clusters; ++c) {
    if (!seen[c]) continue;
    ss += by_cluster[c] * by_cluster[c];
    ++n;
  }
  if (n < 2) return 0.0;
  return std::sqrt(ss * n / (n - 1.0));
}

Eigen::MatrixXd delta_cov(const Design& d, const SelectionFit& f, const Layout& lay) {
  const Eigen::Index k = f.theta.size();
  const Eigen::VectorXd s0 = statistics(d, f, lay, f.theta, d.w);
  Eigen::MatrixXd jac(s0.size(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double h = 1e-6 * (1.0 + std::abs(f.theta(i)));
    Eigen::VectorXd up = f.theta, dn = f.theta;
    up(i) += h;
    dn(i) -= h;
    jac.col(i) = (statistics(d, f, lay, up, d.w) - statistics(d, f, lay, dn, d.w)) / (2.0 * h);
  }
  return jac * f.vcov * jac.transpose();
}

Estimate natural_rho(const SelectionFit& f, int g) {
  Estimate e{f.rho(g), 0.0};
  const int ie = f.eta_index(g);
  if (ie >= 0 && f.vcov.rows() == f.theta.size()) {
    e.se = (1.0 - e.value * e.value) * std::sqrt(std::max(0.0, f.vcov(ie, ie)));
  }
  return e;
}

Estimate coef(const SelectionFit& f, int g, int j) {
  const int i = f.beta_index(g, j);
  const double var = f.vcov.rows() == f.theta.size() ? f.vcov(i, i) : 0.0;
  return {f.theta(i), std::sqrt(std::max(0.0, var))};
}

struct Prepared {
  Design design;
  Layout layout;
};

Prepared prepare(const SelectionFit& fit, const Panel& panel, const DecompOptions& options,
                 std::vector<std::string>* excluded_columns, std::vector<std::string>* warnings) {
  if (fit.spec.group_column.empty() || fit.n_groups() != 2) {
    throw ValidationError("decomposition needs a joint fit with exactly two groups");
  }
  Prepared pr{build_design(panel, fit.spec), {}};
  const Design& d = pr.design;
  if (d.x_names != fit.x_names || d.group_labels != fit.group_labels) {
    throw ValidationError("panel does not match the fit's outcome columns or groups");
  }
  const std::string ref = options.reference_group.empty() ? fit.group_labels[1] : options.reference_group;
  pr.layout.gw = fit.group_index(ref);
  pr.layout.gm = 1 - pr.layout.gw;

  std::vector<double> wsum(2, 0.0);
  for (Eigen::Index p = 0; p < d.patterns(); ++p) wsum[d.group[p]] += d.w(p);
  for (int g = 0; g < 2; ++g) {
    if (!(wsum[g] > 0.0)) throw ValidationError("group '" + fit.group_labels[g] + "' has no rows");
  }

  std::vector<bool> used(options.excluded.size(), false);
  for (int j = 1; j < fit.kx(); ++j) {
    const std::string& name = fit.x_names[j];
    for (const auto& part : split_terms(name)) {
      if (part == fit.spec.group_column) {
        throw ValidationError("covariate '" + name + "' involves the group column; groups already carry their own coefficients");
      }
    }
    bool drop = false;
    for (std::size_t e = 0; e < options.excluded.size(); ++e) {
      if (excluded_by(name, options.excluded[e])) {
        drop = true;
        used[e] = true;
      }
    }
    if (drop) {
      if (excluded_columns) excluded_columns->push_back(name);
    } else {
      pr.layout.items.push_back(j);
    }
  }
  for (std::size_t e = 0; e < options.excluded.size(); ++e) {
    if (!used[e] && warnings) warnings->push_back("excluded column '" + options.excluded[e] + "' matches no outcome column");
  }
  return pr;
}

std::vector<double> multiplicity(const Resample& rs, std::size_t n_rows) {
  std::vector<double> m(n_rows, 0.0);
  for (auto r : rs.rows) m[r] += 1.0;
  return m;
}

}  // namespace

std::string to_string(DecompSe m) {
  switch (m) {
    case DecompSe::bootstrap: return "bootstrap";
    case DecompSe::delta: return "delta";
    case DecompSe::none: return "none";
  }
  return "bootstrap";
}

DecompSe parse_decomp_se(const std::string& s) {
  if (s == "bootstrap" || s == "cluster_bootstrap") return DecompSe::bootstrap;
  if (s == "delta") return DecompSe::delta;
  if (s == "none") return DecompSe::none;
  throw ValidationError("unknown decomposition SE method '" + s + "' (bootstrap, delta, none)");
}

DecompositionResult decompose(const SelectionFit& fit, const Panel& panel, const DecompOptions& options) {
  DecompositionResult r;
  const Prepared pr = prepare(fit, panel, options, &r.excluded_columns, &r.warnings);
  const Design& d = pr.design;
  const Layout& lay = pr.layout;
  r.comparison_group = fit.group_labels[lay.gm];
  r.reference_group = fit.group_labels[lay.gw];
  if (!fit.converged) r.warnings.push_back("fit did not converge: " + fit.message);

  const Eigen::VectorXd s = statistics(d, fit, lay, fit.theta, d.w);
  const Eigen::Index ns = s.size();
  Eigen::VectorXd se = Eigen::VectorXd::Zero(ns);

  switch (options.se_method) {
    case DecompSe::none:
      r.se_method = "none";
      break;
    case DecompSe::delta: {
      if (fit.vcov.rows() != fit.theta.size()) throw ValidationError("fit carries no covariance for delta-method SEs");
      const Eigen::MatrixXd cov = delta_cov(d, fit, lay);
      se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
      r.se_method = "delta (sample means fixed)";
      break;
    }
    case DecompSe::bootstrap: {
      VarianceSpec v = fit.spec.variance;
      if (options.replicates) {
        v.bootstrap_replicates = *options.replicates;
      } else {
        v.bootstrap_replicates = kDefaultReplicates;
        r.warnings.push_back("decomposition bootstrap uses the default of 200 replicates");
      }
      v.base_seed = options.seed ? *options.seed : derive_seed(fit.spec.variance.base_seed, "decomp");
      if (options.threads > 0) v.threads = options.threads;
      v.validate();
      const auto boot = cluster_bootstrap(d.cluster_of_row, d.n_clusters, v, [&](const Resample& rs) {
        const Eigen::VectorXd w = d.reweight(multiplicity(rs, d.pattern_of_row.size()));
        const Eigen::VectorXd th = refit_theta(d, fit, w);
        if (!th.allFinite()) return Eigen::VectorXd::Constant(ns, kNaN).eval();
        return statistics(d, fit, lay, th, w);
      });
      se = boot.se;
      r.replicates = v.bootstrap_replicates;
      r.failed_replicates = boot.failed;
      if (boot.failed > 0) {
        r.warnings.push_back(std::to_string(boot.failed) + " bootstrap replicates failed and were dropped");
      }
      r.se_method = "cluster_bootstrap (B=" + std::to_string(v.bootstrap_replicates) +
                    ", seed=" + std::to_string(v.base_seed) + ")";
      break;
    }
  }

  r.mean_comparison = {s(0), se(0)};
  r.mean_reference = {s(1), se(1)};
  r.total_gap = {s(2), se(2)};
  r.delta_X = {s(3), se(3)};
  r.delta_beta = {s(4), se(4)};
  r.delta_R = {s(5), se(5)};
  for (std::size_t k = 0; k < lay.items.size(); ++k) {
    const int j = lay.items[k];
    const Eigen::Index o = kHead + 4 * static_cast<Eigen::Index>(k);
    CovariateTerm t;
    t.name = fit.x_names[j];
    t.mean_comparison = {s(o), options.se_method == DecompSe::bootstrap ? se(o) : mean_se(d, lay.gm, j)};
    t.mean_reference = {s(o + 1), options.se_method == DecompSe::bootstrap ? se(o + 1) : mean_se(d, lay.gw, j)};
    t.beta_comparison = coef(fit, lay.gm, j);
    t.beta_reference = coef(fit, lay.gw, j);
    t.delta_x = {s(o + 2), se(o + 2)};
    t.delta_beta_x = {s(o + 3), se(o + 3)};
    r.per_covariate.push_back(t);
  }

  r.rho_comparison = natural_rho(fit, lay.gm);
  r.rho_reference = natural_rho(fit, lay.gw);
  for (int g : {lay.gm, lay.gw}) {
    Eigen::VectorXd w = d.w;
    for (Eigen::Index p = 0; p < d.patterns(); ++p) {
      if (d.group[p] != g) w(p) = 0.0;
    }
    const double ll = pattern_loglik(d, fit, fit.theta, w, nullptr, nullptr);
    (g == lay.gm ? r.loglik_comparison : r.loglik_reference) = ll;
  }
  r.loglik = r.loglik_comparison + r.loglik_reference;
  for (int p : d.pattern_of_row) {
    if (d.group[p] == lay.gm) ++r.n_comparison;
    else ++r.n_reference;
  }
  return r;
}

Estimate gap(const SelectionFit& fit, const Panel& panel, const DecompOptions& options) {
  return decompose(fit, panel, options).total_gap;
}

void write_decomposition(std::ostream& out, const DecompositionResult& r) {
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
  auto row = [&](const std::string& section, const std::string& name, const Estimate* cmp, const Estimate* ref,
                 const Estimate* contribution) {
    write_csv_row(out, {section, name, cmp ? num(cmp->value) : "", cmp ? num(cmp->se) : "", ref ? num(ref->value) : "",
                        ref ? num(ref->se) : "", contribution ? num(contribution->value) : "",
                        contribution ? num(contribution->se) : ""});
  };
  write_csv_row(out, {"section", "variable", r.comparison_group, r.comparison_group + "_se", r.reference_group,
                      r.reference_group + "_se", "contribution", "contribution_se"});
  row("outcome", "mean", &r.mean_comparison, &r.mean_reference, &r.total_gap);
  for (const auto& t : r.per_covariate) row("X", t.name, &t.mean_comparison, &t.mean_reference, &t.delta_x);
  row("X", "All X", nullptr, nullptr, &r.delta_X);
  for (const auto& t : r.per_covariate) row("beta", t.name, &t.beta_comparison, &t.beta_reference, &t.delta_beta_x);
  row("beta", "All beta", nullptr, nullptr, &r.delta_beta);
  row("residual", "All Unexplained", nullptr, nullptr, &r.delta_R);
  row("auxiliary", "rho", &r.rho_comparison, &r.rho_reference, nullptr);
  const Estimate llm{r.loglik_comparison, kNaN}, llw{r.loglik_reference, kNaN}, ll{r.loglik, kNaN};
  row("auxiliary", "log_likelihood", &llm, &llw, &ll);
  const Estimate nm{static_cast<double>(r.n_comparison), kNaN}, nw{static_cast<double>(r.n_reference), kNaN},
      n{static_cast<double>(r.n_comparison + r.n_reference), kNaN};
  row("auxiliary", "observations", &nm, &nw, &n);
}

}  // namespace reqiv
