#include "reqiv/msr.hpp"

#include <cmath>
#include <ostream>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/lar.hpp"
#include "reqiv/normal.hpp"

namespace reqiv {

namespace {

constexpr double kZ95 = 1.959963984540054;

struct Index {
  int g = 0;
  double xb = 0.0;
  double rho = 0.0;
  Eigen::VectorXd dxb;  // d(xb)/d theta
};

Index index_of(const SelectionFit& fit, const std::string& group, const std::vector<double>* x_row) {
  if (fit.link != Link::probit || fit.spec.outcome_kind != OutcomeKind::binary) {
    throw ValidationError("m(u) needs a binary probit-link fit");
  }
  if (group.empty() && fit.n_groups() > 1) throw ValidationError("fit has several groups; name one");
  Index ix;
  ix.g = group.empty() ? 0 : fit.group_index(group);
  const int kx = fit.kx();
  std::vector<double> x(kx, 1.0);
  if (x_row) {
    if (static_cast<int>(x_row->size()) != kx - 1) {
      throw ValidationError("covariate profile needs " + std::to_string(kx - 1) + " values");
    }
    std::copy(x_row->begin(), x_row->end(), x.begin() + 1);
  } else if (kx != 1) {
    throw ValidationError("fit has covariates; supply a covariate profile");
  }
  ix.dxb = Eigen::VectorXd::Zero(fit.theta.size());
  for (int j = 0; j < kx; ++j) {
    ix.xb += x[j] * fit.beta(j, ix.g);
    ix.dxb(fit.beta_index(ix.g, j)) = x[j];
  }
  ix.rho = fit.rho(ix.g);
  if (!(std::abs(ix.rho) < 1.0)) throw ValidationError("m(u) is degenerate at |rho| = 1");
  return ix;
}

}  // namespace

MsrValue msr_eval(const SelectionFit& fit, double u, const std::string& group, const std::vector<double>* x_row) {
  if (!(u > 0.0 && u < 1.0)) throw ValidationError("u must lie strictly between 0 and 1");
  const Index ix = index_of(fit, group, x_row);
  const double rho = ix.rho, s = std::sqrt(1.0 - rho * rho);
  const double q = normal_quantile(1.0 - u);
  const double a = (ix.xb + rho * q) / s;
  Eigen::VectorXd da = ix.dxb / s;
  const int ie = fit.eta_index(ix.g);
  if (ie >= 0) {
    const double da_drho = q / s + (ix.xb + rho * q) * rho / (s * s * s);
    da(ie) = da_drho * (1.0 - rho * rho);
  }
  double var_a = 0.0;
  if (fit.vcov.rows() == fit.theta.size()) var_a = std::max(0.0, da.dot(fit.vcov * da));
  const double se_a = std::sqrt(var_a);
  MsrValue v;
  v.m = normal_cdf(a);
  v.se = normal_pdf(a) * se_a;
  v.ci_low = normal_cdf(a - kZ95 * se_a);
  v.ci_high = normal_cdf(a + kZ95 * se_a);
  return v;
}

double msr_aggregate(const SelectionFit& fit, const std::string& group, const std::vector<double>* x_row) {
  return normal_cdf(index_of(fit, group, x_row).xb);
}

double msr_segment_mean(const SelectionFit& fit, double u_low, double u_high, const std::string& group,
                        const std::vector<double>* x_row) {
  if (!(u_low >= 0.0 && u_high <= 1.0 && u_high > u_low)) {
    throw ValidationError("segment needs 0 <= u_low < u_high <= 1");
  }
  const Index ix = index_of(fit, group, x_row);
  // P(Y* = 1, U <= p) = Phi2(x'beta, Phi^{-1}(p); rho)
  auto mass = [&](double p) {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return normal_cdf(ix.xb);
    return bivariate_normal_cdf(ix.xb, normal_quantile(p), ix.rho);
  };
  return (mass(u_high) - mass(u_low)) / (u_high - u_low);
}

Panel filter_group(const Panel& panel, const std::string& group_column, const std::string& label) {
  if (group_column.empty() || label.empty()) return panel;
  const auto idx = panel.covariate_index(group_column);
  if (!idx) throw ValidationError("panel has no column '" + group_column + "'");
  Panel out;
  out.covariate_names = panel.covariate_names;
  for (const auto& row : panel.rows) {
    if (format_double(row.covariates[*idx]) == label) out.rows.push_back(row);
  }
  if (out.rows.empty()) throw ValidationError("no panel rows in group '" + label + "'");
  return out;
}

MsrCurve msr_curve(const SelectionFit& fit, const Panel& panel, int grid_size, const std::string& group,
                   const std::vector<double>* x_row) {
  if (grid_size < 1) throw ValidationError("grid size must be positive");
  MsrCurve c;
  c.group = group;
  for (int i = 0; i < grid_size; ++i) {
    const double u = (i + 0.5) / grid_size;
    const MsrValue v = msr_eval(fit, u, group, x_row);
    c.u_grid.push_back(u);
    c.m_values.push_back(v.m);
    c.ci_low.push_back(v.ci_low);
    c.ci_high.push_back(v.ci_high);
  }
  const Panel rows = filter_group(panel, fit.spec.group_column, group);
  const LarProfile profile = lar_profile(rows);
  c.notes = profile.skipped;
  if (x_row) c.notes.push_back("curve and segment model means are for one covariate profile; LARs average over all rows");
  for (const auto& e : profile.estimates) {
    ComplierSegment s;
    s.r = e.r;
    s.r_prime = e.r_prime;
    s.u_low = e.p_r_prime;
    s.u_high = e.p_r;
    s.lar = e.complier_mean;
    s.lar_se = e.se;
    s.model_mean = msr_segment_mean(fit, s.u_low, s.u_high, group, x_row);
    c.complier_segments.push_back(s);
  }
  return c;
}

void write_msr_curve(std::ostream& out, const MsrCurve& curve) {
  write_csv_row(out, {"u", "m", "ci_low", "ci_high"});
  for (std::size_t i = 0; i < curve.u_grid.size(); ++i) {
    write_csv_row(out, {format_double(curve.u_grid[i]), format_double(curve.m_values[i]),
                        format_double(curve.ci_low[i]), format_double(curve.ci_high[i])});
  }
}

void write_complier_segments(std::ostream& out, const MsrCurve& curve) {
  write_csv_row(out, {"r", "r_prime", "u_low", "u_high", "lar", "lar_se", "model_mean"});
  for (const auto& s : curve.complier_segments) {
    write_csv_row(out, {std::to_string(s.r), std::to_string(s.r_prime), format_double(s.u_low),
                        format_double(s.u_high), format_double(s.lar), format_double(s.lar_se),
                        format_double(s.model_mean)});
  }
}

}  // namespace reqiv
