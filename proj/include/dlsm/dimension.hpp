#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlsm/augmentation.hpp"
#include "dlsm/common.hpp"
#include "dlsm/config.hpp"
#include "dlsm/dist.hpp"
#include "dlsm/iams_tables.hpp"
#include "dlsm/latent_sampler.hpp"
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/rng.hpp"
#include "dlsm/special.hpp"

namespace dlsm {

// Total number of Gaussian pseudo-observations in the current augmentation:
// one interarrival row per allocated dyad-time, a second where the count is
// positive. This is the sample size entering the dimension penalty.
inline long pseudo_observation_count(const NetworkSeries& data, const AugmentedState& aug) {
  require(aug.w.rows() == static_cast<Eigen::Index>(n_dyads(data.N)) && aug.w.cols() == data.T,
          "pseudo_observation_count: augmentation shape mismatch");
  long q = 0;
  for (int t = 0; t < data.T; ++t)
    for (Eigen::Index k = 0; k < aug.w.rows(); ++k)
      if (aug.w(k, t) == 1) q += data.counts(k, t) > 0 ? 2 : 1;
  return q;
}

// One ascending node scan of conditional mean solves under the given
// parameters, starting from `start`. No noise is injected, so repeated scans
// move the state toward a joint conditional mode; deterministic given inputs.
// Under the full penalty the initial state is replaced by its conditional
// mean as well, otherwise it is carried through unchanged.
inline LatentState smoothed_mode(const NetworkSeries& data, const GlobalParams& par,
                                 const ModelConfig& cfg, const LatentState& start,
                                 const AugmentedState& aug, MixtureTables& tables) {
  LatentState st = start;
  const int n = st.N();
  require(n == data.N && st.T() == data.T, "smoothed_mode: state shape mismatch");
  if (cfg.parametrization == Parametrization::NodeWise) {
    const Eigen::MatrixXd omega0 =
        (1.0 / cfg.prior.x0_var) * Eigen::MatrixXd::Identity(st.d, st.d);
    for (int i = 0; i < n; ++i) {
      TrajectorySystem sys =
          prior_precision_nodewise(par.phi, par.cov, st.x0.row(i).transpose(), omega0, st.T());
      sys.rows = assemble_likelihood(i, data, par, st, aug, tables);
      sys.prepare();
      scatter_trajectory(sys.mean, i, st);
    }
  } else {
    const FeatureWiseCache cache = featurewise_cache(par.phi, par.cov, st.x0, st.T());
    for (int i = 0; i < n; ++i) {
      TrajectorySystem sys = prior_conditional_featurewise(cache, st, i);
      sys.rows = assemble_likelihood(i, data, par, st, aug, tables);
      sys.prepare();
      scatter_trajectory(sys.mean, i, st);
    }
  }
  if (cfg.penalty == LaplacePenalty::Full) st.x0 = initial_state_conditional(par, cfg, st).mean;
  return st;
}

// log of one pseudo-observation's mixture-component density,
// c_r N(-log tau; log lambda + mu_r, s2_r) / tau.
inline double pseudo_row_log_density(double tau, long r, double log_lambda,
                                     const MixtureComponents& mix) {
  require(tau > 0.0 && r >= 0 && r < mix.mu.size(), "pseudo_row_log_density: bad slot");
  const double lt = std::log(tau);
  const double e = -lt - log_lambda - mix.mu[r];
  return mix.log_c[r] + mix.log_nc[r] - 0.5 * e * e / mix.s2[r] - lt;
}

// Laplace approximation to the log marginal of the pseudo-data under one
// candidate dimension, evaluated at the smoothed mode: pseudo-likelihood plus
// state-transition density (plus the initial-state prior under the full
// penalty), minus d * horizon * N / 2 times the log pseudo-sample size.
inline double laplace_log_marginal(const NetworkSeries& data, const GlobalParams& par,
                                   const ModelConfig& cfg, const LatentState& mode,
                                   const AugmentedState& aug, MixtureTables& tables) {
  const int n = data.N;
  const int t_len = data.T;
  const int d = mode.d;
  require(mode.N() == n && mode.T() == t_len, "laplace_log_marginal: state shape mismatch");

  double lik = 0.0;
  const MixtureComponents& one = tables.lookup(1);
  const auto dyads = dyad_list(n);
  for (int t = 0; t < t_len; ++t) {
    const Eigen::MatrixXd& xt = mode.x[t];
    for (std::size_t k = 0; k < dyads.size(); ++k) {
      if (aug.w(static_cast<Eigen::Index>(k), t) == 0) continue;
      const auto [i, j] = dyads[k];
      const double ll = log_intensity(par.alpha, xt, i, j);
      lik += pseudo_row_log_density(aug.tau1(k, t), aug.r1(k, t), ll, one);
      const long y = data.counts(k, t);
      if (y > 0) lik += pseudo_row_log_density(aug.tau2(k, t), aug.r2(k, t), ll, tables.lookup(y));
    }
  }
  require(std::isfinite(lik), "laplace_log_marginal: nonfinite pseudo-likelihood term");

  double trans = 0.0;
  if (cfg.parametrization == Parametrization::NodeWise) {
    require(par.phi.rows() == d && par.cov.rows() == d, "laplace_log_marginal: dynamics shape");
    Eigen::LLT<Eigen::MatrixXd> ups(par.cov);
    require(ups.info() == Eigen::Success, "laplace_log_marginal: Upsilon not positive definite");
    const double log_det =
        2.0 * Eigen::MatrixXd(ups.matrixL()).diagonal().array().log().sum();
    for (int t = 0; t < t_len; ++t) {
      const Eigen::MatrixXd& prev = t == 0 ? mode.x0 : mode.x[t - 1];
      const Eigen::MatrixXd resid = mode.x[t] - prev * par.phi.transpose();
      const Eigen::MatrixXd solved = ups.solve(resid.transpose());
      trans += -0.5 * (n * (d * kLog2Pi + log_det) + resid.transpose().cwiseProduct(solved).sum());
    }
  } else {
    require(par.phi.rows() == n && par.cov.rows() == n, "laplace_log_marginal: dynamics shape");
    Eigen::LLT<Eigen::MatrixXd> om(par.cov);
    require(om.info() == Eigen::Success, "laplace_log_marginal: Omega not positive definite");
    const double log_det_prec =
        2.0 * Eigen::MatrixXd(om.matrixL()).diagonal().array().log().sum();
    for (int t = 0; t < t_len; ++t) {
      const Eigen::MatrixXd& prev = t == 0 ? mode.x0 : mode.x[t - 1];
      const Eigen::MatrixXd resid = mode.x[t] - par.phi * prev;
      trans += -0.5 * (d * (n * kLog2Pi - log_det_prec) + resid.cwiseProduct(par.cov * resid).sum());
    }
  }
  require(std::isfinite(trans), "laplace_log_marginal: nonfinite state-transition term");

  double init = 0.0;
  if (cfg.penalty == LaplacePenalty::Full) {
    const double v0 = cfg.prior.x0_var;
    init = -0.5 * n * d * (kLog2Pi + std::log(v0)) -
           0.5 * (mode.x0.array() - cfg.prior.x0_mean).square().sum() / v0;
    require(std::isfinite(init), "laplace_log_marginal: nonfinite initial-state term");
  }

  const long q_star = pseudo_observation_count(data, aug);
  require(q_star > 0, "laplace_log_marginal: no active pseudo-observations");
  const double horizon = cfg.penalty == LaplacePenalty::Full ? t_len + 1.0 : t_len;
  return lik + trans + init - 0.5 * d * horizon * n * std::log(static_cast<double>(q_star));
}

// Log prior over candidate dimensions 1..d_max; uniform unless weights given.
inline std::vector<double> log_dimension_prior(const ModelConfig& cfg) {
  const int m = cfg.max_dimension();
  std::vector<double> lp(m);
  if (cfg.prior.d_weights.empty()) {
    const double u = -std::log(static_cast<double>(m));
    for (int k = 0; k < m; ++k) lp[k] = u;
  } else {
    require(static_cast<int>(cfg.prior.d_weights.size()) == m,
            "log_dimension_prior: weight count mismatch");
    for (int k = 0; k < m; ++k) lp[k] = std::log(cfg.prior.d_weights[k]);
  }
  return lp;
}

// Normalized posterior over candidate dimensions, entry d-1 for dimension d.
inline std::vector<double> dimension_probabilities(const std::vector<double>& log_marginal,
                                                   const std::vector<double>& log_prior) {
  require(!log_marginal.empty() && log_marginal.size() == log_prior.size(),
          "dimension_probabilities: size mismatch");
  std::vector<double> lw(log_marginal.size());
  for (std::size_t k = 0; k < lw.size(); ++k) lw[k] = log_marginal[k] + log_prior[k];
  const double lse = log_sum_exp(lw);
  require(std::isfinite(lse), "dimension_probabilities: no candidate has positive weight");
  for (double& v : lw) v = std::exp(v - lse);
  return lw;
}

// Draws a dimension in 1..d_max proportional to exp(log_marginal + log_prior).
inline int sample_dimension(Rng& rng, const std::vector<double>& log_marginal,
                            const std::vector<double>& log_prior) {
  require(!log_marginal.empty() && log_marginal.size() == log_prior.size(),
          "sample_dimension: size mismatch");
  std::vector<double> lw(log_marginal.size());
  for (std::size_t k = 0; k < lw.size(); ++k) lw[k] = log_marginal[k] + log_prior[k];
  return rcategorical_logw(rng, lw) + 1;
}

// Per-candidate bookkeeping for the dimension move: the most recent dynamics
// and latent state seen under each candidate, the current Laplace values, and
// which candidate the chain is running at.
struct DimensionLedger {
  struct Candidate {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd cov;  // Upsilon (node-wise) or Omega (feature-wise)
    LatentState state;
  };

  std::vector<Candidate> cand;       // index d-1
  std::vector<double> log_marginal;  // refreshed by evaluate_candidates
  int active = 1;

  Candidate& at(int d) {
    require(d >= 1 && d <= static_cast<int>(cand.size()), "DimensionLedger: dimension out of range");
    return cand[d - 1];
  }
  const Candidate& at(int d) const {
    require(d >= 1 && d <= static_cast<int>(cand.size()), "DimensionLedger: dimension out of range");
    return cand[d - 1];
  }
};

// Identity dynamics and zero states for every candidate. Feature-wise
// candidates share the node-level dynamics shape.
inline DimensionLedger init_dimension_ledger(const ModelConfig& cfg, int n, int t_len) {
  const int m = cfg.max_dimension();
  DimensionLedger ledger;
  ledger.cand.resize(m);
  ledger.log_marginal.assign(m, 0.0);
  ledger.active = std::min(cfg.d, m);
  for (int dd = 1; dd <= m; ++dd) {
    const int p = cfg.parametrization == Parametrization::NodeWise ? dd : n;
    ledger.cand[dd - 1].phi = Eigen::MatrixXd::Identity(p, p);
    ledger.cand[dd - 1].cov = Eigen::MatrixXd::Identity(p, p);
    ledger.cand[dd - 1].state = LatentState::zeros(n, dd, t_len);
  }
  return ledger;
}

// Refreshes every candidate's smoothed state in place and recomputes its
// Laplace value under the shared augmentation. Deterministic given inputs.
inline void evaluate_candidates(const NetworkSeries& data, const GlobalParams& par,
                                const ModelConfig& cfg, DimensionLedger& ledger,
                                const AugmentedState& aug, MixtureTables& tables) {
  const int m = static_cast<int>(ledger.cand.size());
  require(m >= 1, "evaluate_candidates: empty ledger");
  ledger.log_marginal.assign(m, 0.0);
  for (int dd = 1; dd <= m; ++dd) {
    DimensionLedger::Candidate& c = ledger.cand[dd - 1];
    GlobalParams pd = par;
    pd.phi = c.phi;
    pd.cov = c.cov;
    c.state = smoothed_mode(data, pd, cfg, c.state, aug, tables);
    ledger.log_marginal[dd - 1] = laplace_log_marginal(data, pd, cfg, c.state, aug, tables);
  }
}

// Post-draw bookkeeping for the candidates the chain is not running at:
// either keep their last dynamics or redraw them from the prior. Feature-wise
// candidates share the active dynamics, so only node-wise ones are redrawn.
inline void refresh_inactive(Rng& rng, const ModelConfig& cfg, DimensionLedger& ledger) {
  if (cfg.inactive == InactivePolicy::Carry) return;
  if (cfg.parametrization != Parametrization::NodeWise) return;
  for (int dd = 1; dd <= static_cast<int>(ledger.cand.size()); ++dd) {
    if (dd == ledger.active) continue;
    DimensionLedger::Candidate& c = ledger.cand[dd - 1];
    const double sd = std::sqrt(cfg.prior.phi_var);
    if (cfg.phi == PhiStructure::Diagonal) {
      c.phi.setZero(dd, dd);
      for (int a = 0; a < dd; ++a) c.phi(a, a) = cfg.prior.phi_mean + sd * rnorm(rng);
    } else {
      c.phi.resize(dd, dd);
      for (int b = 0; b < dd; ++b)
        for (int a = 0; a < dd; ++a) c.phi(a, b) = cfg.prior.phi_mean + sd * rnorm(rng);
    }
    if (cfg.upsilon == UpsilonStructure::Diagonal) {
      c.cov.setZero(dd, dd);
      for (int a = 0; a < dd; ++a) c.cov(a, a) = rinvgamma(rng, cfg.prior.ig_a, cfg.prior.ig_b);
    } else {
      const double nu = cfg.prior.iw_nu > 0.0 ? cfg.prior.iw_nu : dd + 2.0;
      c.cov = rinvwishart(rng, nu,
                          cfg.prior.iw_scale * Eigen::MatrixXd::Identity(dd, dd));
    }
  }
}

}  // namespace dlsm
