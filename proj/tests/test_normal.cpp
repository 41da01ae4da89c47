#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "reqiv/normal.hpp"

using namespace reqiv;

TEST_CASE("normal cdf anchors") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(std::abs(normal_cdf(40.0) - 1.0) <= 1e-14);
  CHECK(normal_cdf(-40.0) >= 0.0);
  CHECK(std::abs(normal_cdf(1.959964) - 0.975) <= 1e-6);
  CHECK(std::abs(normal_cdf(1.959964) - oracle::series_normal_cdf(1.959964)) <= 1e-14);
}

TEST_CASE("normal cdf agrees with the erf series and is monotone") {
  double prev = 0.0;
  for (double x = -4.0; x <= 4.0; x += 0.01) {
    const double v = normal_cdf(x);
    CHECK(std::abs(v - oracle::series_normal_cdf(x)) <= 1e-14);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("quantile inverts the cdf") {
  CHECK(normal_quantile(0.5) == 0.0);
  for (double p : {1e-6, 0.31, 0.99}) {
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) <= 1e-12);
  }
  CHECK(std::abs(normal_quantile(0.975) - oracle::newton_normal_quantile(0.975)) <= 1e-12);
  CHECK(std::abs(normal_quantile(0.975) - 1.959964) <= 1e-5);
  CHECK_THROWS_AS(normal_quantile(0.0), std::domain_error);
  CHECK_THROWS_AS(normal_quantile(1.0), std::domain_error);
  CHECK_THROWS_AS(normal_quantile(-0.2), std::domain_error);
}

TEST_CASE("quantile round trip over [1e-10, 1 - 1e-10]") {
  std::vector<double> ps = {1e-10, 1e-9, 1e-7, 1e-4, 1e-2, 0.1, 0.5, 0.9, 0.99, 0.9999, 1 - 1e-7,
                            1 - 1e-10};
  for (int i = 1; i < 1000; ++i) ps.push_back(i / 1000.0);
  for (double p : ps) CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) <= 1e-12);
}

TEST_CASE("log cdf and inverse Mills ratio in the lower tail") {
  // Continuity across the switch to the continued fraction.
  CHECK(std::abs(log_normal_cdf(-8.0 + 1e-9) - log_normal_cdf(-8.0 - 1e-9)) < 1e-7);
  CHECK(std::abs(inverse_mills(-8.0 + 1e-9) - inverse_mills(-8.0 - 1e-9)) < 1e-7);
  CHECK(std::abs(log_normal_cdf(-5.0) - std::log(normal_cdf(-5.0))) < 1e-13);
  // Asymptotic log Phi(x) = log phi(x) - log(-x) + log(1 - 1/x^2 + 3/x^4 - ...)
  const double x = -60.0;
  const double asym = log_normal_pdf(x) - std::log(-x) + std::log1p(-1 / (x * x) + 3 / std::pow(x, 4));
  CHECK(std::abs(log_normal_cdf(x) - asym) < 1e-9);
  CHECK(std::isfinite(inverse_mills(-1e3)));
  CHECK(std::abs(inverse_mills(-60.0) / 60.0 - 1.0) < 1e-3);
  CHECK(std::abs(log_normal_cdf(3.0) - std::log(normal_cdf(3.0))) < 1e-15);
}

TEST_CASE("bivariate cdf anchors") {
  CHECK(bivariate_normal_cdf(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  for (double a : {-1.3, 0.0, 0.7}) {
    for (double b : {-0.4, 1.1}) {
      CHECK(bivariate_normal_cdf(a, b, 1.0) == std::min(normal_cdf(a), normal_cdf(b)));
      CHECK(bivariate_normal_cdf(a, b, -1.0) ==
            std::max(0.0, normal_cdf(a) + normal_cdf(b) - 1.0));
    }
  }
  CHECK_THROWS_AS(bivariate_normal_cdf(0, 0, 1.0001), std::domain_error);
  const double q = oracle::quadrature_bvn_cdf(0.5, -0.3, 0.4);
  CHECK(std::abs(bivariate_normal_cdf(0.5, -0.3, 0.4) - q) <= 1e-8);
}

TEST_CASE("bivariate cdf at the origin matches the arcsine identity for every correlation") {
  for (double rho : {-0.99999, -0.9995, -0.95, -0.5, 0.2, 0.8, 0.93, 0.999, 0.9995, 0.999999}) {
    const double exact = 0.25 + std::asin(rho) / (2 * kPi);
    CHECK(std::abs(bivariate_normal_cdf(0, 0, rho) - exact) <= 1e-12);
  }
}

TEST_CASE("bivariate cdf matches density quadrature on a 100-point grid") {
  double worst = 0.0;
  for (double a : {-2.1, -0.8, 0.0, 0.9, 2.4}) {
    for (double b : {-1.7, -0.2, 0.6, 1.9, 3.0}) {
      for (double rho : {-0.9, -0.35, 0.55, 0.96}) {
        worst = std::max(worst, std::abs(bivariate_normal_cdf(a, b, rho) -
                                         oracle::quadrature_bvn_cdf(a, b, rho)));
      }
    }
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("bivariate cdf marginal limit and monotonicity") {
  for (double rho : {-0.999, -0.6, 0.0, 0.3, 0.95, 0.9999}) {
    for (double a : {-3.0, -0.5, 0.0, 1.2}) {
      CHECK(std::abs(bivariate_normal_cdf(a, INFINITY, rho) - normal_cdf(a)) <= 1e-10);
      CHECK(std::abs(bivariate_normal_cdf(a, 40.0, rho) - normal_cdf(a)) <= 1e-10);
    }
  }
  for (double b : {-1.0, 0.4}) {
    double prev = 0.0;
    for (double a = -5; a <= 5; a += 0.05) {
      const double v = bivariate_normal_cdf(a, b, 0.7);
      CHECK(v >= prev - 1e-15);
      prev = v;
    }
    prev = 0.0;
    for (double rho = -0.999; rho <= 0.999; rho += 0.003) {
      const double v = bivariate_normal_cdf(0.3, b, rho);
      CHECK(v >= prev - 1e-15);
      prev = v;
    }
  }
}

TEST_CASE("near-singular correlations stay accurate") {
  for (double rho : {0.9991, 0.99999, -0.9993}) {
    for (double a : {-1.0, 0.5}) {
      for (double b : {-0.7, 0.8}) {
        CHECK(std::abs(bivariate_normal_cdf(a, b, rho) - oracle::conditional_bvn_cdf(a, b, rho)) <=
              1e-10);
      }
    }
  }
}

TEST_CASE("bivariate cdf keeps relative accuracy deep in the lower tail") {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> corner(-6.0, -1.0), corr(-0.95, 0.95);
  double worst = 0.0;
  for (int i = 0; i < 300; ++i) {
    const double a = corner(gen), b = corner(gen), rho = corr(gen);
    const double expected = oracle::conditional_bvn_cdf(a, b, rho);
    worst = std::max(worst, std::abs(bivariate_normal_cdf(a, b, rho) / expected - 1.0));
  }
  CHECK(worst < 1e-8);
}
