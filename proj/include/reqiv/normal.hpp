#pragma once

// Univariate and bivariate standard normal kernels.

namespace reqiv {

inline constexpr double kSqrt2 = 1.41421356237309504880;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double x);
double log_normal_pdf(double x);

// Phi(x). Saturates to 0 or 1 in the far tails.
double normal_cdf(double x);

// log Phi(x), accurate where Phi(x) underflows.
double log_normal_cdf(double x);

// phi(x) / Phi(x). Uses a continued fraction in the lower tail so it stays
// finite (approximately -x) when Phi(x) underflows.
double inverse_mills(double x);

// Phi^{-1}(p) for 0 < p < 1; throws std::domain_error otherwise.
double normal_quantile(double p);

// P(X <= a, Y <= b) for a standard bivariate normal with correlation rho.
// Infinite limits are allowed. Throws std::domain_error for |rho| > 1.
double bivariate_normal_cdf(double a, double b, double rho);

// Joint density of the standard bivariate normal.
double bivariate_normal_pdf(double a, double b, double rho);

}  // namespace reqiv
