#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "reqiv/panel.hpp"
#include "reqiv/selectmod.hpp"

namespace reqiv {

// m(u) = Phi((x'beta + rho Phi^{-1}(1 - u)) / sqrt(1 - rho^2)) for a binary
// probit-link fit. Bands come from the delta method on the index and are
// mapped through Phi, so they stay inside [0, 1].
struct MsrValue {
  double m = 0.0;
  double se = 0.0;  // delta-method SE of m
  double ci_low = 0.0;
  double ci_high = 0.0;
};

// `x_row` holds values for the fit's non-intercept outcome columns; it may be
// omitted only for constant-only fits. `group` is empty for one-group fits.
MsrValue msr_eval(const SelectionFit& fit, double u, const std::string& group = "",
                  const std::vector<double>* x_row = nullptr);

double msr_aggregate(const SelectionFit& fit, const std::string& group = "",
                     const std::vector<double>* x_row = nullptr);

// Model-implied mean of Y* among subjects with u_low < U <= u_high, in closed
// form through the bivariate normal cdf.
double msr_segment_mean(const SelectionFit& fit, double u_low, double u_high, const std::string& group = "",
                        const std::vector<double>* x_row = nullptr);

struct ComplierSegment {
  int r = 0;
  int r_prime = 0;
  double u_low = 0.0;   // P(r')
  double u_high = 0.0;  // P(r)
  double lar = 0.0;
  double lar_se = 0.0;
  double model_mean = 0.0;
};

struct MsrCurve {
  std::string group;
  std::vector<double> u_grid;
  std::vector<double> m_values;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<ComplierSegment> complier_segments;
  std::vector<std::string> notes;
  std::string ci_method = "delta (index scale)";
};

// Grid u_i = (i + 1/2) / grid_size. Segments are the consecutive-pair LARs of
// the panel rows in `group`. Fits with covariates need `x_row`; the segment
// model means are then for that profile while the LARs average over everyone.
MsrCurve msr_curve(const SelectionFit& fit, const Panel& panel, int grid_size = 512, const std::string& group = "",
                   const std::vector<double>* x_row = nullptr);

void write_msr_curve(std::ostream& out, const MsrCurve& curve);
void write_complier_segments(std::ostream& out, const MsrCurve& curve);

// Rows of the panel whose group column formats to `label` (all rows when the
// column is empty).
Panel filter_group(const Panel& panel, const std::string& group_column, const std::string& label);

}  // namespace reqiv
