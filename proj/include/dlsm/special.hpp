#pragma once

#include <cmath>
#include <limits>

#include "dlsm/common.hpp"

namespace dlsm {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kSqrt2 = 1.4142135623730950488;

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * kLog2Pi); }
inline double log_norm_pdf(double x) { return -0.5 * x * x - 0.5 * kLog2Pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }
// Upper tail P(X > x), accurate for large positive x.
inline double norm_sf(double x) { return 0.5 * std::erfc(x / kSqrt2); }

// Wichura's AS 241 (PPND16): double-precision standard normal quantile.
inline double norm_quantile(double p) {
  require(p > 0.0 && p < 1.0, "norm_quantile: p outside (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

// Recurrence to x >= 10, then the Bernoulli asymptotic series.
inline double digamma(double x) {
  require(x > 0.0, "digamma: nonpositive argument");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series = std::log(x) - 0.5 * inv -
                  inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                          inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
  return acc + series;
}

inline double trigamma(double x) {
  require(x > 0.0, "trigamma: nonpositive argument");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series = inv + 0.5 * inv2 +
                  inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 -
                                inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
  return acc + series;
}

// Regularized lower incomplete gamma P(a,x): series for x < a+1, continued
// fraction for the complement otherwise.
inline double gamma_p(double a, double x) {
  require(a > 0.0 && x >= 0.0, "gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double lga = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16)
        return sum * std::exp(-x + a * std::log(x) - lga);
    }
    fail("gamma_p: series did not converge");
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int n = 1; n <= 500; ++n) {
    double an = -n * (n - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - lga) * h;
}

// Inverse of gamma_p in x for fixed a, by bracketed Newton.
inline double gamma_p_inv(double a, double p) {
  require(a > 0.0 && p >= 0.0 && p <= 1.0, "gamma_p_inv: bad arguments");
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) fail("gamma_p_inv: p = 1");
  // Wilson-Hilferty start.
  double g = norm_quantile(p);
  double t = 1.0 - 1.0 / (9.0 * a) + g / (3.0 * std::sqrt(a));
  double x = a * t * t * t;
  if (!(x > 0.0) || !std::isfinite(x)) x = a;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  const double lga = std::lgamma(a);
  for (int it = 0; it < 200; ++it) {
    double f = gamma_p(a, x) - p;
    if (f > 0.0) hi = x; else lo = x;
    double logpdf = -x + (a - 1.0) * std::log(x) - lga;
    double step = f * std::exp(-logpdf);
    double xn = x - step;
    if (!(xn > lo && (xn < hi))) xn = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * x;
    if (std::fabs(xn - x) <= 1e-14 * (x + 1e-300)) return xn;
    x = xn;
  }
  return x;
}

}  // namespace dlsm
