#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dlsm/config.hpp"
#include "dlsm/dist.hpp"
#include "dlsm/iams_tables.hpp"
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"

namespace dlsm {

struct Interarrival {
  double tau1 = 0.0;
  double tau2 = 0.0;  // meaningful only when has_tau2
  bool has_tau2 = false;
};

// tau2 is the arrival time of the last event inside the unit window (the
// largest of y uniform order statistics); tau1 the gap from it to the first
// event past the window boundary.
inline Interarrival sample_interarrival(Rng& rng, long y, double lambda) {
  require(std::isfinite(lambda) && lambda > 0.0, "sample_interarrival: lambda must be positive");
  require(y >= 0, "sample_interarrival: negative count");
  Interarrival out;
  const double xi = rexp(rng, lambda);
  if (y == 0) {
    out.tau1 = 1.0 + xi;
    return out;
  }
  out.tau2 = rbeta(rng, static_cast<double>(y), 1.0);
  out.has_tau2 = true;
  // For huge y the largest order statistic rounds to 1; keep the gap on the
  // open side of zero so its logarithm stays finite.
  out.tau1 = std::max(1.0 + xi - out.tau2, std::numeric_limits<double>::min());
  return out;
}

// Mixture component for one pseudo-observation: k with probability
// proportional to c_k phi(-log tau - log lambda | mu_k, s2_k).
inline int sample_indicators(Rng& rng, double tau, double log_lambda, long nu,
                             const MixtureComponents& table) {
  require(tau > 0.0 && std::isfinite(log_lambda), "sample_indicators: bad residual inputs");
  require(table.nu == nu, "sample_indicators: table built for a different shape");
  const double e = -std::log(tau) - log_lambda;
  std::vector<double> lw(static_cast<std::size_t>(table.R));
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < table.R; ++k) {
    const double z = e - table.mu[k];
    lw[static_cast<std::size_t>(k)] = table.log_c[k] + table.log_nc[k] - 0.5 * z * z / table.s2[k];
    best = std::max(best, lw[static_cast<std::size_t>(k)]);
  }
  require(std::isfinite(best), "sample_indicators: all component weights vanished");
  return rcategorical_logw(rng, lw);
}

struct PseudoObservation {
  double value = 0.0;
  double variance = 1.0;
};

// Working response treated downstream as value ~ N(log lambda, variance).
inline PseudoObservation pseudo_observation(double tau, int r, const MixtureComponents& table) {
  require(tau > 0.0, "pseudo_observation: tau must be positive");
  require(r >= 0 && r < table.R, "pseudo_observation: component index out of range");
  return {-std::log(tau) - table.mu[r], table.s2[r]};
}

// Component allocation: positive counts force the Poisson component. The
// limits lambda = 0 (exp underflow) and lambda = inf are exact: exp(-lambda)
// saturates to 1 and 0 respectively.
inline int sample_allocation(Rng& rng, long y, double lambda, double p) {
  require(!std::isnan(lambda) && lambda >= 0.0, "sample_allocation: lambda must be nonnegative");
  require(p >= 0.0 && p <= 1.0, "sample_allocation: p outside [0,1]");
  if (y > 0) return 1;
  if (p >= 1.0) return 1;
  const double num = p * std::exp(-lambda);
  return rbernoulli(rng, num / ((1.0 - p) + num)) ? 1 : 0;
}

// Inverse-CDF utility draw, mu + F^{-1}(w + kappa (1 - w - F(mu))), written
// from the precise side of the boundary: the w=1 branch needs F(mu) at full
// relative precision (it bounds the draw when mu << 0), the w=0 branch needs
// the survival function (mu >> 0). Forming 1 - F(mu) by subtraction loses
// the boundary and lets draws cross zero.
inline double utility_from_kappa(int w, double mu, double kappa) {
  const double p = w == 1 ? kappa * norm_cdf(mu) : kappa * norm_sf(mu);
  require(p > 0.0 && p < 1.0, "utility_from_kappa: quantile argument on the boundary");
  return w == 1 ? mu - norm_quantile(p) : mu + norm_quantile(p);
}

// Falls back to the exact tail sampler when the quantile argument or the
// draw itself is pinned to the boundary in doubles.
inline double sample_utility(Rng& rng, int w, double mu) {
  require(std::isfinite(mu), "sample_utility: mu must be finite");
  require(w == 0 || w == 1, "sample_utility: w must be 0 or 1");
  const double edge = w == 1 ? norm_cdf(mu) : norm_sf(mu);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double p = runif(rng) * edge;
    if (p <= 0.0 || p >= 1.0) continue;
    const double z = w == 1 ? mu - norm_quantile(p) : mu + norm_quantile(p);
    if (w == 1 ? z > 0.0 : z < 0.0) return z;
  }
  if (w == 1) return mu + rtnorm_std(rng, -mu, std::numeric_limits<double>::infinity());
  return mu + rtnorm_std(rng, -std::numeric_limits<double>::infinity(), -mu);
}

struct ExpansionDraw {
  double gamma_tilde = 0.0;
  double gamma_star = 0.0;
};

namespace detail {

// Rounding at a truncation bound can leave a utility exactly on the wrong
// side of zero; push it one ulp into its sign region. Anything beyond
// rounding noise is a bug, not a boundary case.
inline void enforce_utility_signs(Eigen::Ref<Eigen::ArrayXd> z_t, const Eigen::ArrayXi& w_t) {
  for (Eigen::Index k = 0; k < z_t.size(); ++k) {
    const double viol = w_t[k] == 1 ? -z_t[k] : z_t[k];
    if (viol < 0.0) continue;
    require(viol <= 1e-9, "expansion: utility crossed its sign bound");
    z_t[k] = w_t[k] == 1 ? std::nextafter(0.0, 1.0) : std::nextafter(0.0, -1.0);
  }
}

}  // namespace detail

// Location sandwich move on one time slice, conditional on the probit means.
// Shift all utilities by a prior draw, then pull the shift back with a draw
// from its conditional, truncated so every sign constraint stays satisfied.
inline ExpansionDraw location_expansion(Rng& rng, Eigen::Ref<Eigen::ArrayXd> z_t,
                                        const Eigen::ArrayXi& w_t, const Eigen::ArrayXd& mu_z,
                                        double g_prior) {
  const Eigen::Index n = z_t.size();
  require(n >= 1 && w_t.size() == n && mu_z.size() == n, "location_expansion: slice size mismatch");
  require(g_prior > 0.0, "location_expansion: prior variance must be positive");
  ExpansionDraw d;
  d.gamma_tilde = std::sqrt(g_prior) * rnorm(rng);
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double zt = z_t[k] + d.gamma_tilde;
    sum += zt - mu_z[k];
    if (w_t[k] == 1)
      hi = std::min(hi, zt);
    else
      lo = std::max(lo, zt);
  }
  require(lo <= hi, "location_expansion: inconsistent utility signs");
  const double s2 = 1.0 / (1.0 / g_prior + static_cast<double>(n));
  d.gamma_star = rtnorm(rng, s2 * sum, std::sqrt(s2), lo, hi);
  z_t += d.gamma_tilde - d.gamma_star;
  detail::enforce_utility_signs(z_t, w_t);
  return d;
}

// Scale sandwich move on one time slice, conditional on the probit means.
// Residuals are scaled by a prior draw and scaled back; the pulled-back
// variance draw is truncated to the interval where every rescaled utility
// keeps its sign (the interval always contains the prior draw).
inline ExpansionDraw scale_expansion(Rng& rng, Eigen::Ref<Eigen::ArrayXd> z_t,
                                     const Eigen::ArrayXi& w_t, const Eigen::ArrayXd& mu_z,
                                     double a_prior, double b_prior) {
  const Eigen::Index n = z_t.size();
  require(n >= 1 && w_t.size() == n && mu_z.size() == n, "scale_expansion: slice size mismatch");
  require(a_prior > 0.0 && b_prior > 0.0, "scale_expansion: bad inverse-gamma prior");
  ExpansionDraw d;
  d.gamma_tilde = rinvgamma(rng, a_prior, b_prior);
  double g_lo = 0.0;
  double g_hi = std::numeric_limits<double>::infinity();
  double ss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double u = z_t[k] - mu_z[k];
    ss += d.gamma_tilde * u * u;
    if (u == 0.0 || mu_z[k] == 0.0) continue;
    // z' = mu + sqrt(gt/g) u flips sign at g = gt u^2 / mu^2; whether that is
    // an upper or lower bound depends on which term carries the sign of z.
    const double crit = d.gamma_tilde * (u / mu_z[k]) * (u / mu_z[k]);
    const bool positive_region = w_t[k] == 1;
    const bool u_carries = positive_region ? (u > 0.0 && mu_z[k] < 0.0) : (u < 0.0 && mu_z[k] > 0.0);
    const bool mu_carries = positive_region ? (u < 0.0 && mu_z[k] > 0.0) : (u > 0.0 && mu_z[k] < 0.0);
    if (u_carries) g_hi = std::min(g_hi, crit);
    if (mu_carries) g_lo = std::max(g_lo, crit);
  }
  require(g_lo < g_hi, "scale_expansion: inconsistent utility signs");
  d.gamma_star = rinvgamma_trunc(rng, a_prior + 0.5 * static_cast<double>(n), b_prior + 0.5 * ss,
                                 g_lo, g_hi, d.gamma_tilde);
  const double scale = std::sqrt(d.gamma_tilde / d.gamma_star);
  for (Eigen::Index k = 0; k < n; ++k) z_t[k] = mu_z[k] + scale * (z_t[k] - mu_z[k]);
  detail::enforce_utility_signs(z_t, w_t);
  return d;
}

// One cell's (tau, r) slots given its current indicator: cleared when the
// cell sits in the Dirac component, redrawn from the interarrival law
// otherwise.
inline void refresh_interarrival_cell(Rng& rng, long y, double log_lambda, MixtureTables& tables,
                                      AugmentedState& aug, Eigen::Index row, int t) {
  if (aug.w(row, t) == 0) {
    aug.tau1(row, t) = 0.0;
    aug.tau2(row, t) = 0.0;
    aug.r1(row, t) = -1;
    aug.r2(row, t) = -1;
    return;
  }
  // Transient states early in a chain can push the log intensity beyond the
  // range where exp() and the resulting arrival gap are representable;
  // saturate there (never binding within double-exponential data scales).
  require(!std::isnan(log_lambda), "refresh_interarrival_cell: log intensity is NaN");
  const double ll = std::clamp(log_lambda, -600.0, 600.0);
  const Interarrival ia = sample_interarrival(rng, y, std::exp(ll));
  aug.tau1(row, t) = ia.tau1;
  aug.tau2(row, t) = ia.has_tau2 ? ia.tau2 : 0.0;
  aug.r1(row, t) = sample_indicators(rng, ia.tau1, ll, 1, tables.lookup(1));
  aug.r2(row, t) = ia.has_tau2 ? sample_indicators(rng, ia.tau2, ll, y, tables.lookup(y)) : -1;
}

// Refresh (tau, r) for every active cell; inactive cells are cleared so each
// positive count carries two pseudo-observations, each active zero count one,
// each Dirac cell none.
inline void refresh_interarrivals(Rng& rng, const NetworkSeries& data, const GlobalParams& par,
                                  const LatentState& st, MixtureTables& tables,
                                  AugmentedState& aug) {
  const auto dyads = dyad_list(data.N);
  for (int t = 0; t < data.T; ++t) {
    for (std::size_t m = 0; m < dyads.size(); ++m) {
      const auto [i, j] = dyads[m];
      const Eigen::Index row = static_cast<Eigen::Index>(m);
      const double ll = log_intensity(par.alpha, st.x[static_cast<std::size_t>(t)], i, j);
      refresh_interarrival_cell(rng, data.counts(row, t), ll, tables, aug, row, t);
    }
  }
}

// Zero-inflation block for one sweep: component indicators, utilities, and
// the two sandwich moves per time slice. The probit coefficients are updated
// elsewhere. The indicator draw marginalizes over the interarrival slots, so
// any cell whose indicator flips gets its (tau, r) completed on the spot and
// the augmentation stays well-formed for the next sweep.
inline void refresh_zero_inflation(Rng& rng, const NetworkSeries& data, const GlobalParams& par,
                                   const LatentState& st, const PriorConfig& prior,
                                   MixtureTables& tables, AugmentedState& aug) {
  const auto dyads = dyad_list(data.N);
  const int m = static_cast<int>(dyads.size());
  Eigen::ArrayXd mu_z(m);
  for (int t = 0; t < data.T; ++t) {
    for (int k = 0; k < m; ++k) {
      const auto [i, j] = dyads[static_cast<std::size_t>(k)];
      mu_z[k] = utility_mean(par, data, t, i, j);
      const long y = data.counts(k, t);
      const double ll = log_intensity(par.alpha, st.x[static_cast<std::size_t>(t)], i, j);
      const int w = sample_allocation(rng, y, std::exp(ll), norm_cdf(mu_z[k]));
      const bool flipped = w != aug.w(k, t);
      aug.w(k, t) = w;
      if (flipped) refresh_interarrival_cell(rng, y, ll, tables, aug, k, t);
      aug.z(k, t) = sample_utility(rng, w, mu_z[k]);
    }
    auto z_col = aug.z.col(t);
    const Eigen::ArrayXi w_col = aug.w.col(t);
    const ExpansionDraw loc = location_expansion(rng, z_col, w_col, mu_z, prior.expansion_g);
    aug.gamma_loc_tilde[t] = loc.gamma_tilde;
    aug.gamma_loc_star[t] = loc.gamma_star;
    const ExpansionDraw sc =
        scale_expansion(rng, z_col, w_col, mu_z, prior.expansion_a, prior.expansion_b);
    aug.gamma_scale_tilde[t] = sc.gamma_tilde;
    aug.gamma_scale_star[t] = sc.gamma_star;
  }
}

}  // namespace dlsm
