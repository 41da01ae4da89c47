#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "reqiv/error.hpp"
#include "reqiv/msr.hpp"
#include "reqiv/normal.hpp"
#include "reqiv/synthgen.hpp"

using namespace reqiv;

namespace {

// Constant-only binary fit with the given beta and rho and a diagonal vcov.
SelectionFit constant_fit(double beta, double rho, double var_beta = 0.0, double var_eta = 0.0) {
  SelectionFit f;
  f.spec.outcome_kind = OutcomeKind::binary;
  f.spec.z_columns = {"R=2"};
  f.method = FitMethod::heckprobit;
  f.link = Link::probit;
  f.group_labels = {"all"};
  f.x_names = {"(intercept)"};
  f.z_names = {"(intercept)", "R=2"};
  f.theta = Eigen::VectorXd::Zero(4);
  f.theta(0) = beta;
  f.theta(3) = std::atanh(rho);
  f.beta = Eigen::MatrixXd::Constant(1, 1, beta);
  f.alpha = Eigen::MatrixXd::Zero(2, 1);
  f.rho = Eigen::VectorXd::Constant(1, rho);
  f.sigma = Eigen::VectorXd::Ones(1);
  f.vcov = Eigen::MatrixXd::Zero(4, 4);
  f.vcov(0, 0) = var_beta;
  f.vcov(3, 3) = var_eta;
  return f;
}

// 10 always-takers, 10 reminder compliers, 20 never.
Panel small_panel() {
  return fixture::type_panel({{6, 1, 1.0}, {4, 1, 0.0}, {3, 2, 1.0}, {7, 2, 0.0}, {20, 0, 0.0}}, 2);
}

double integrate(const std::function<double(double)>& f, double lo, double hi) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, 1e-12);
}

}  // namespace

TEST_CASE("m(u) special cases") {
  const SelectionFit flat = constant_fit(0.3, 0.0);
  for (double u : {0.01, 0.3, 0.77, 0.999}) CHECK(msr_eval(flat, u).m == doctest::Approx(normal_cdf(0.3)).epsilon(1e-15));
  for (double rho : {-0.9, -0.2, 0.4, 0.95}) CHECK(msr_eval(constant_fit(0.0, rho), 0.5).m == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("m(u) against a 50-digit evaluation") {
  using big = boost::multiprecision::cpp_bin_float_50;
  const big beta = big(2) / 10, rho = big(3) / 10, u = big(1) / 4;
  const big sqrt2 = boost::multiprecision::sqrt(big(2));
  const big q = -sqrt2 * boost::math::erfc_inv(2 * (1 - u));
  const big a = (beta + rho * q) / boost::multiprecision::sqrt(1 - rho * rho);
  const big expected = boost::math::erfc(-a / sqrt2) / 2;
  CHECK(msr_eval(constant_fit(0.2, 0.3), 0.25).m == doctest::Approx(expected.convert_to<double>()).epsilon(1e-14));
}

TEST_CASE("aggregate and integral identity") {
  CHECK(msr_aggregate(constant_fit(0.0, 0.5)) == 0.5);
  CHECK(msr_aggregate(constant_fit(normal_quantile(0.375), -0.2)) == doctest::Approx(0.375).epsilon(1e-14));
  for (double beta : {-1.0, 0.4, 1.3}) {
    for (double rho : {-0.95, -0.6, 0.0, 0.5, 0.95}) {
      const SelectionFit f = constant_fit(beta, rho);
      const double integral = integrate([&](double u) { return msr_eval(f, u).m; }, 0.0, 1.0);
      CAPTURE(beta);
      CAPTURE(rho);
      CHECK(std::abs(integral - msr_aggregate(f)) <= 1e-6);
    }
  }
}

TEST_CASE("segment means match quadrature") {
  const SelectionFit f = constant_fit(0.2, 0.4);
  for (auto [lo, hi] : {std::pair{0.0, 0.15}, std::pair{0.15, 0.30}, std::pair{0.3, 1.0}}) {
    const double q = integrate([&](double u) { return msr_eval(f, u).m; }, lo, hi) / (hi - lo);
    CHECK(msr_segment_mean(f, lo, hi) == doctest::Approx(q).epsilon(1e-9));
  }
}

TEST_CASE("m(u) falls with u when rho > 0 and rises when rho < 0") {
  for (double rho : {-0.7, 0.7}) {
    const SelectionFit f = constant_fit(0.1, rho);
    MsrCurve c = msr_curve(f, small_panel(), 64);
    for (std::size_t i = 1; i < c.m_values.size(); ++i) {
      if (rho > 0) CHECK(c.m_values[i] < c.m_values[i - 1]);
      else CHECK(c.m_values[i] > c.m_values[i - 1]);
    }
  }
}

TEST_CASE("curve grid, bands and segments") {
  const MsrCurve flat = msr_curve(constant_fit(0.25, 0.0), small_panel(), 3);
  REQUIRE(flat.u_grid.size() == 3);
  CHECK(flat.u_grid[0] == doctest::Approx(1.0 / 6));
  CHECK(flat.u_grid[2] == doctest::Approx(5.0 / 6));
  for (double m : flat.m_values) CHECK(m == doctest::Approx(normal_cdf(0.25)).epsilon(1e-15));

  const SelectionFit f = constant_fit(0.2, 0.5, 0.01, 0.04);
  const MsrCurve c = msr_curve(f, small_panel());
  REQUIRE(c.u_grid.size() == 512);
  CHECK(c.u_grid.front() == 1.0 / 1024);
  CHECK(c.u_grid.back() == 1023.0 / 1024);
  for (std::size_t i = 0; i < c.u_grid.size(); ++i) {
    CHECK(c.ci_low[i] <= c.m_values[i]);
    CHECK(c.m_values[i] <= c.ci_high[i]);
    if (i > 0) CHECK(c.u_grid[i] > c.u_grid[i - 1]);
  }
  REQUIRE(c.complier_segments.size() == 2);
  CHECK(c.complier_segments[0].u_low == 0.0);
  CHECK(c.complier_segments[0].u_high == doctest::Approx(0.25));
  CHECK(c.complier_segments[0].lar == doctest::Approx(0.6));
  CHECK(c.complier_segments[1].u_high == doctest::Approx(0.5));
  CHECK(c.complier_segments[1].lar == doctest::Approx(0.3));

  std::ostringstream curve, segments;
  write_msr_curve(curve, flat);
  write_complier_segments(segments, c);
  CHECK(curve.str().rfind("u,m,ci_low,ci_high\n", 0) == 0);
  CHECK(segments.str().find("r,r_prime,u_low,u_high,lar,lar_se,model_mean") == 0);
}

TEST_CASE("delta-method SE matches numeric differentiation") {
  SelectionFit f = constant_fit(0.3, -0.4, 0.02, 0.05);
  f.vcov(0, 3) = f.vcov(3, 0) = 0.01;
  const double u = 0.2;
  auto m_at = [&](double beta, double eta) { return msr_eval(constant_fit(beta, std::tanh(eta)), u).m; };
  const double h = 1e-6, eta = std::atanh(-0.4);
  const double gb = (m_at(0.3 + h, eta) - m_at(0.3 - h, eta)) / (2 * h);
  const double ge = (m_at(0.3, eta + h) - m_at(0.3, eta - h)) / (2 * h);
  const double var = gb * gb * 0.02 + ge * ge * 0.05 + 2 * gb * ge * 0.01;
  CHECK(msr_eval(f, u).se == doctest::Approx(std::sqrt(var)).epsilon(1e-6));
}

TEST_CASE("m(u) errors") {
  CHECK_THROWS_AS(msr_eval(constant_fit(0.1, 0.3), 0.0), ValidationError);
  CHECK_THROWS_AS(msr_eval(constant_fit(0.1, 0.3), 1.0), ValidationError);
  CHECK_THROWS_AS(msr_eval(constant_fit(0.1, 1.0), 0.5), ValidationError);
  SelectionFit cont = constant_fit(0.1, 0.3);
  cont.spec.outcome_kind = OutcomeKind::continuous;
  cont.link = Link::identity;
  CHECK_THROWS_AS(msr_eval(cont, 0.5), ValidationError);
  SelectionFit with_x = constant_fit(0.1, 0.3);
  with_x.x_names.push_back("x");
  with_x.beta = Eigen::MatrixXd::Constant(2, 1, 0.1);
  CHECK_THROWS_AS(msr_eval(with_x, 0.5), ValidationError);
  const std::vector<double> profile = {2.0};
  CHECK(msr_eval(with_x, 0.5, "", &profile).m == doctest::Approx(normal_cdf(0.3 / std::sqrt(0.91))));
}

TEST_CASE("exactly identified fit reproduces the gender-gap fixture complier means") {
  const Panel men = filter_group(gender_gap_panel(), "female", "0");
  ModelSpec spec;
  spec.outcome_kind = OutcomeKind::binary;
  spec.z_columns = {"R=2"};
  const SelectionFit f = fit_heckprobit(men, spec);
  REQUIRE(f.converged);
  const MsrCurve c = msr_curve(f, men, 128);
  REQUIRE(c.complier_segments.size() == 2);
  const auto& early = c.complier_segments[0];
  const auto& late = c.complier_segments[1];
  CHECK(early.lar == doctest::Approx(0.378).epsilon(2e-4));
  CHECK(late.lar == doctest::Approx(0.366).epsilon(2e-4));
  CHECK(std::abs(early.model_mean - early.lar) < 1e-6);
  CHECK(std::abs(late.model_mean - late.lar) < 1e-6);
  // Sign of the fitted rho sets the direction of the curve.
  const bool falling = c.m_values.back() < c.m_values.front();
  CHECK(falling == (f.rho(0) > 0));
}
