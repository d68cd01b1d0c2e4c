#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "dlsm/common.hpp"
#include "dlsm/rng.hpp"
#include "dlsm/special.hpp"

namespace dlsm {

inline double runif(Rng& rng) { return rng.uniform(); }

// One uniform per draw (quantile transform) keeps stream consumption fixed.
inline double rnorm(Rng& rng) { return norm_quantile(rng.uniform()); }

inline double rexp(Rng& rng, double rate) {
  require(rate > 0.0 && std::isfinite(rate), "rexp: bad rate");
  return -std::log(rng.uniform()) / rate;
}

// Marsaglia-Tsang; shape < 1 boosted through the power transform.
inline double rgamma(Rng& rng, double shape, double rate = 1.0) {
  require(shape > 0.0 && rate > 0.0, "rgamma: bad parameters");
  if (shape < 1.0) {
    const double u = rng.uniform();
    return rgamma(rng, shape + 1.0, rate) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rnorm(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v / rate;
  }
}

// pdf proportional to x^{-a-1} exp(-b/x).
inline double rinvgamma(Rng& rng, double a, double b) { return b / rgamma(rng, a, 1.0); }

inline double rbeta(Rng& rng, double a, double b) {
  if (b == 1.0) return std::pow(rng.uniform(), 1.0 / a);
  const double x = rgamma(rng, a);
  const double y = rgamma(rng, b);
  return x / (x + y);
}

inline int rbernoulli(Rng& rng, double p) { return rng.uniform() < p ? 1 : 0; }

inline long rpois_knuth(Rng& rng, double lambda) {
  const double limit = std::exp(-lambda);
  long k = 0;
  double prod = rng.uniform();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform();
  }
  return k;
}

// Hormann's PTRS transformed rejection, exact for lambda >= 10.
inline long rpois_ptrs(Rng& rng, double lambda) {
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * std::sqrt(lambda);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    double u = rng.uniform() - 0.5;
    double v = rng.uniform();
    double us = 0.5 - std::fabs(u);
    double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        kf * loglam - lambda - std::lgamma(kf + 1.0))
      return static_cast<long>(kf);
  }
}

inline long rpois(Rng& rng, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), "rpois: bad rate");
  if (lambda == 0.0) return 0;
  if (lambda < 10.0) return rpois_knuth(rng, lambda);
  return rpois_ptrs(rng, lambda);
}

namespace detail {

// Lower-truncated standard normal, X >= a.
inline double rtnorm_lower(Rng& rng, double a) {
  if (a < 5.0) {
    const double sa = norm_sf(a);
    const double s = sa * rng.uniform();
    return -norm_quantile(s);
  }
  // Robert's exponential-proposal rejection; acceptance -> 1 as a grows.
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a - std::log(rng.uniform()) / alpha;
    const double r = x - alpha;
    if (std::log(rng.uniform()) <= -0.5 * r * r) return x;
  }
}

// Two-sided with 0 <= a < b via truncated-exponential rejection (far tail).
inline double rtnorm_band_tail(Rng& rng, double a, double b) {
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  const double span = -std::expm1(-alpha * (b - a));
  const double peak_at = std::min(std::max(alpha, a), b);
  const double logpeak = alpha * peak_at - 0.5 * peak_at * peak_at;
  for (;;) {
    const double u = rng.uniform();
    const double x = a - std::log1p(-u * span) / alpha;
    const double logacc = alpha * x - 0.5 * x * x - logpeak;
    if (std::log(rng.uniform()) <= logacc) return std::min(x, b);
  }
}

inline double rtnorm_band_upper(Rng& rng, double a, double b) {
  const double sa = norm_sf(a);
  const double sb = norm_sf(b);
  const double mass = sa - sb;
  if (sa > 0.0 && mass > 1e-8 * sa) {
    const double s = sb + rng.uniform() * mass;
    return -norm_quantile(s);
  }
  return rtnorm_band_tail(rng, a, b);
}

}  // namespace detail

// Standard normal truncated to [lo, hi]; bounds may be infinite.
inline double rtnorm_std(Rng& rng, double lo, double hi) {
  require(lo < hi, "rtnorm_std: empty interval");
  const double inf = std::numeric_limits<double>::infinity();
  if (lo == -inf && hi == inf) return rnorm(rng);
  if (lo == -inf) return -detail::rtnorm_lower(rng, -hi);
  if (hi == inf) return detail::rtnorm_lower(rng, lo);
  if (lo >= 0.0) return detail::rtnorm_band_upper(rng, lo, hi);
  if (hi <= 0.0) return -detail::rtnorm_band_upper(rng, -hi, -lo);
  const double plo = norm_cdf(lo), phi = norm_cdf(hi);
  return norm_quantile(plo + rng.uniform() * (phi - plo));
}

inline double rtnorm(Rng& rng, double mu, double sigma, double lo, double hi) {
  return mu + sigma * rtnorm_std(rng, (lo - mu) / sigma, (hi - mu) / sigma);
}

// Gamma(shape, rate) restricted to [lo, hi]. CDF inversion when the interval
// mass is resolvable; otherwise an exact slice-sampling move from x0 (which
// must lie inside the interval), still invariant for the truncated target.
inline double rgamma_trunc(Rng& rng, double shape, double rate, double lo, double hi, double x0) {
  require(shape > 0.0 && rate > 0.0, "rgamma_trunc: bad parameters");
  require(lo < hi, "rgamma_trunc: empty interval");
  lo = std::max(lo, 0.0);
  const double plo = lo <= 0.0 ? 0.0 : gamma_p(shape, rate * lo);
  const double phi = std::isinf(hi) ? 1.0 : gamma_p(shape, rate * hi);
  const double mass = phi - plo;
  if (mass > 1e-12) {
    double u = plo + rng.uniform() * mass;
    u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
    double x = gamma_p_inv(shape, u) / rate;
    return std::min(std::max(x, std::nextafter(lo, hi)), std::isinf(hi) ? x : std::nextafter(hi, lo));
  }
  require(x0 > lo && x0 < hi, "rgamma_trunc: fallback start outside interval");
  // Shrinkage slice sampling on the bounded interval: invariant for the
  // truncated target even when the interval mass underflows the CDF.
  auto logf = [&](double x) { return (shape - 1.0) * std::log(x) - rate * x; };
  double x = x0;
  for (int sweep = 0; sweep < 8; ++sweep) {
    const double y = logf(x) + std::log(rng.uniform());
    double L = lo, R = hi;
    if (std::isinf(R)) {
      R = x + 1.0;
      while (logf(R) > y) R *= 2.0;
    }
    for (int k = 0; k < 400; ++k) {
      const double cand = L + rng.uniform() * (R - L);
      if (logf(cand) >= y) {
        x = cand;
        break;
      }
      (cand < x ? L : R) = cand;
    }
  }
  return x;
}

// Inverse gamma IG(a,b) on [lo,hi]: 1/X is Gamma(a, rate=b) on [1/hi, 1/lo].
inline double rinvgamma_trunc(Rng& rng, double a, double b, double lo, double hi, double x0) {
  const double inf = std::numeric_limits<double>::infinity();
  const double glo = std::isinf(hi) ? 0.0 : 1.0 / hi;
  const double ghi = lo <= 0.0 ? inf : 1.0 / lo;
  return 1.0 / rgamma_trunc(rng, a, b, glo, ghi, 1.0 / x0);
}

inline int rcategorical_logw(Rng& rng, const std::vector<double>& logw) {
  require(!logw.empty(), "rcategorical_logw: empty weights");
  const double lse = log_sum_exp(logw);
  require(std::isfinite(lse), "rcategorical_logw: all weights vanish");
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < logw.size(); ++k) {
    acc += std::exp(logw[k] - lse);
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(logw.size()) - 1;
}

// Draw from N(mean, K^{-1}) given the lower Cholesky factor of the precision K.
inline Eigen::VectorXd rmvnorm_prec(Rng& rng, const Eigen::VectorXd& mean,
                                    const Eigen::MatrixXd& chol_prec_lower) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rnorm(rng);
  return mean + chol_prec_lower.transpose().triangularView<Eigen::Upper>().solve(z);
}

inline Eigen::VectorXd rmvnorm_cov(Rng& rng, const Eigen::VectorXd& mean,
                                   const Eigen::MatrixXd& chol_cov_lower) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rnorm(rng);
  return mean + chol_cov_lower.triangularView<Eigen::Lower>() * z;
}

// Bartlett factor: lower-triangular A with A A' ~ Wishart(nu, I).
inline Eigen::MatrixXd rwishart_bartlett(Rng& rng, double nu, int d) {
  require(nu > d - 1, "rwishart_bartlett: dof too small");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    A(i, i) = std::sqrt(2.0 * rgamma(rng, 0.5 * (nu - i), 1.0));
    for (int j = 0; j < i; ++j) A(i, j) = rnorm(rng);
  }
  return A;
}

// Inverse Wishart IW(nu, Psi): mean Psi/(nu-d-1).
inline Eigen::MatrixXd rinvwishart(Rng& rng, double nu, const Eigen::MatrixXd& Psi) {
  const int d = static_cast<int>(Psi.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(Psi);
  require(llt.info() == Eigen::Success, "rinvwishart: scale not SPD");
  const Eigen::MatrixXd A = rwishart_bartlett(rng, nu, d);
  // Upsilon = L A^{-T} A^{-1} L' so that Upsilon^{-1} ~ Wishart(nu, Psi^{-1}).
  Eigen::MatrixXd Linv_t = A.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd(llt.matrixL().transpose()));
  Eigen::MatrixXd out = Linv_t.transpose() * Linv_t;
  return 0.5 * (out + out.transpose());
}

}  // namespace dlsm
