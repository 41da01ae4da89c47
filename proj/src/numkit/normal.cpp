#include "reqiv/normal.hpp"

#include <algorithm>
#include <array>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace reqiv {
namespace {

// Mills ratio R(t) = (1 - Phi(t)) / phi(t) for large positive t, by backward
// evaluation of Laplace's continued fraction.
double upper_mills_ratio(double t) {
  double tail = t;
  for (int k = 60; k >= 1; --k) tail = t + k / tail;
  return 1.0 / tail;
}

// Genz's upper bivariate probability P(X > h, Y > k).
double bvn_upper(double h, double k, double r) {
  static constexpr std::array<double, 3> w6 = {0.1713244923791705, 0.3607615730481384,
                                               0.4679139345726904};
  static constexpr std::array<double, 3> x6 = {0.9324695142031522, 0.6612093864662647,
                                               0.2386191860831970};
  static constexpr std::array<double, 6> w12 = {0.04717533638651177, 0.1069393259953183,
                                                0.1600783285433464,  0.2031674267230659,
                                                0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12 = {0.9815606342467191, 0.9041172563704750,
                                                0.7699026741943050, 0.5873179542866171,
                                                0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20 = {
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20 = {
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  const double* w;
  const double* x;
  int lg;
  if (std::abs(r) < 0.3) {
    w = w6.data(), x = x6.data(), lg = 3;
  } else if (std::abs(r) < 0.75) {
    w = w12.data(), x = x12.data(), lg = 6;
  } else {
    w = w20.data(), x = x20.data(), lg = 10;
  }

  const double two_pi = 2.0 * kPi;
  double hk = h * k;
  double bvn = 0.0;

  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (int i = 0; i < lg; ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sign * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return bvn * asr / two_pi + normal_cdf(-h) * normal_cdf(-k);
  }

  // High correlation: expansion around the singular limit, conditioning on
  // the difference of the two coordinates.
  if (r < 0) {
    k = -k;
    hk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 80.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0) {
      bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    }
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(two_pi) * normal_cdf(-b / a);
      bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a /= 2.0;
    double sum = 0.0;
    for (int i = 0; i < lg; ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double xi = a * (1.0 + sign * x[i]);
        const double xs = xi * xi;
        asr = -(bs / xs + hk) / 2.0;
        if (asr <= -100.0) continue;
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
        sum += w[i] * std::exp(asr) * (sp - ep);
      }
    }
    bvn = (a * sum - bvn) / two_pi;
  }
  if (r > 0) return bvn + normal_cdf(-std::max(h, k));
  if (h >= k) return -bvn;
  const double l = h < 0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
  return l - bvn;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double log_normal_pdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double log_normal_cdf(double x) {
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x / kSqrt2));
  if (x > -8.0) return std::log(0.5 * std::erfc(-x / kSqrt2));
  if (std::isinf(x)) return -std::numeric_limits<double>::infinity();
  return log_normal_pdf(x) + std::log(upper_mills_ratio(-x));
}

double inverse_mills(double x) {
  if (x > -8.0) return normal_pdf(x) / normal_cdf(x);
  if (std::isinf(x)) return std::numeric_limits<double>::infinity();
  return 1.0 / upper_mills_ratio(-x);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("normal_quantile: probability must lie in (0, 1)");
  }
  // Wichura's AS 241 (PPND16), followed by one Halley refinement step.
  const double q = p - 0.5;
  double x;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q *
        (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) *
                  r +
              45921.953931549871457) *
                 r +
             13731.693765509461125) *
                r +
            1971.5909503065514427) *
               r +
           133.14166789178437745) *
              r +
          3.387132872796366608) /
        (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) *
                  r +
              21213.794301586595867) *
                 r +
             5394.1960214247511077) *
                r +
            687.1870074920579083) *
               r +
           42.313330701600911252) *
              r +
          1.0);
  } else {
    double r = q < 0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
      r -= 1.6;
      x = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r +
                0.24178072517745061177) *
                   r +
               1.27045825245236838258) *
                  r +
              3.64784832476320460504) *
                 r +
             5.7694972214606914055) *
                r +
            4.6303378461565452959) *
               r +
           1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r +
                0.0151986665636164571966) *
                   r +
               0.14810397642748007459) *
                  r +
              0.68976733498510000455) *
                 r +
             1.6763848301838038494) *
                r +
            2.05319162663775882187) *
               r +
           1.0);
    } else {
      r -= 5.0;
      x = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r +
                0.0012426609473880784386) *
                   r +
               0.026532189526576123093) *
                  r +
              0.29656057182850489123) *
                 r +
             1.7848265399172913358) *
                r +
            5.4637849111641143699) *
               r +
           6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r +
                1.8463183175100546818e-5) *
                   r +
               7.868691311456132591e-4) *
                  r +
              0.0148753612908506148525) *
                 r +
             0.13692988092273580531) *
                r +
            0.59983220655588793769) *
               r +
           1.0);
    }
    if (q < 0.0) x = -x;
  }
  // Refine against the erfc-based cdf; work in the tail nearer to p.
  const double err = x < 0 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
  const double u = err / normal_pdf(x);
  if (std::isfinite(u)) x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double bivariate_normal_cdf(double a, double b, double rho) {
  if (!(std::abs(rho) <= 1.0)) {
    throw std::domain_error("bivariate_normal_cdf: correlation must lie in [-1, 1]");
  }
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  if (a == -INFINITY || b == -INFINITY) return 0.0;
  if (a == INFINITY) return normal_cdf(b);
  if (b == INFINITY) return normal_cdf(a);
  if (rho == 1.0) return normal_cdf(std::min(a, b));
  if (rho == -1.0) return std::max(0.0, normal_cdf(a) + normal_cdf(b) - 1.0);
  if (rho == 0.0) return normal_cdf(a) * normal_cdf(b);
  const double p = std::clamp(bvn_upper(-a, -b, rho), 0.0, 1.0);
  if (p > 1e-7) return p;
  // Deep lower tail: the series above loses relative accuracy (for rho < 0 it
  // is a difference of nearly equal terms), so integrate the conditional form
  // over the tighter margin instead.
  const double hi = std::min(a, b), other = std::max(a, b);
  const double sd = std::sqrt((1.0 - rho) * (1.0 + rho));
  auto integrand = [&](double x) { return normal_pdf(x) * normal_cdf((other - rho * x) / sd); };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      integrand, -std::numeric_limits<double>::infinity(), hi, 20, 1e-13);
}

double bivariate_normal_pdf(double a, double b, double rho) {
  const double one_minus = (1.0 - rho) * (1.0 + rho);
  const double q = (a * a - 2.0 * rho * a * b + b * b) / one_minus;
  return std::exp(-0.5 * q) / (2.0 * kPi * std::sqrt(one_minus));
}

}  // namespace reqiv
