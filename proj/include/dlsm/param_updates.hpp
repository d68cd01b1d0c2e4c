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
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/rng.hpp"

namespace dlsm {

struct AlphaConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
};

// Joint conditional of the node fixed effects. Each active pseudo-observation
// contributes a design row e_i + e_j with residual value - x_i'x_j and its
// mixture-component variance.
inline AlphaConditional alpha_conditional(const NetworkSeries& data, const LatentState& st,
                                          const AugmentedState& aug, MixtureTables& tables,
                                          const PriorConfig& prior) {
  const int n = data.N;
  Eigen::MatrixXd prec =
      Eigen::MatrixXd::Identity(n, n) / prior.sigma_alpha2;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);  // prior mean zero
  const auto dyads = dyad_list(n);
  for (int t = 0; t < data.T; ++t) {
    for (std::size_t k = 0; k < dyads.size(); ++k) {
      if (aug.w(static_cast<Eigen::Index>(k), t) == 0) continue;
      const auto [i, j] = dyads[k];
      const double xx = st.x[t].row(i).dot(st.x[t].row(j));
      auto add = [&](const PseudoObservation& po) {
        const double inv = 1.0 / po.variance;
        const double resid = po.value - xx;
        prec(i, i) += inv;
        prec(j, j) += inv;
        prec(i, j) += inv;
        prec(j, i) += inv;
        rhs[i] += inv * resid;
        rhs[j] += inv * resid;
      };
      add(pseudo_observation(aug.tau1(k, t), aug.r1(k, t), tables.lookup(1)));
      const long y = data.counts(k, t);
      if (y > 0) add(pseudo_observation(aug.tau2(k, t), aug.r2(k, t), tables.lookup(y)));
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  require(llt.info() == Eigen::Success, "alpha_conditional: precision not positive definite");
  return {llt.solve(rhs), prec};
}

inline Eigen::VectorXd sample_alpha(Rng& rng, const NetworkSeries& data, const LatentState& st,
                                    const AugmentedState& aug, MixtureTables& tables,
                                    const PriorConfig& prior) {
  const AlphaConditional cond = alpha_conditional(data, st, aug, tables, prior);
  const Eigen::MatrixXd lower =
      Eigen::LLT<Eigen::MatrixXd>(cond.precision).matrixL();
  return rmvnorm_prec(rng, cond.mean, lower);
}

// Conditional of one node's zero-inflation coefficients given the utilities.
// Partial residuals remove the partner's contribution for every dyad-time.
inline Eigen::VectorXd sample_beta_node(Rng& rng, int i, const NetworkSeries& data,
                                        const GlobalParams& par, const AugmentedState& aug,
                                        const PriorConfig& prior) {
  const int n = data.N;
  const int l = data.L;
  require(i >= 0 && i < n, "sample_beta_node: node out of range");
  require(par.beta.rows() == n && par.beta.cols() == l, "sample_beta_node: beta shape");
  Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(l, l) / prior.sigma_beta2;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(l);
  for (int t = 0; t < data.T; ++t) {
    const Eigen::MatrixXd& vt = data.v[static_cast<std::size_t>(t)];
    const Eigen::VectorXd vi = vt.row(i).transpose();
    const Eigen::MatrixXd vvt = vi * vi.transpose();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const int k = i < j ? dyad_index(n, i, j) : dyad_index(n, j, i);
      const double uhat = aug.z(k, t) - par.beta.row(j).dot(vt.row(j));
      prec += vvt;
      rhs += vi * uhat;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  require(llt.info() == Eigen::Success, "sample_beta_node: precision not positive definite");
  return rmvnorm_prec(rng, llt.solve(rhs), Eigen::MatrixXd(llt.matrixL()));
}

// Ascending Gibbs sweep over all nodes, updating par.beta in place.
inline void sample_beta(Rng& rng, const NetworkSeries& data, GlobalParams& par,
                        const AugmentedState& aug, const PriorConfig& prior) {
  for (int i = 0; i < data.N; ++i)
    par.beta.row(i) = sample_beta_node(rng, i, data, par, aug, prior).transpose();
}

// Exact draw of a p x p AR coefficient matrix whose vectorized conditional
// precision is I/prior_var + A (x) noise_prec, without forming the p^2 x p^2
// matrix: both factors are eigendecomposed and the draw happens in the
// rotated basis. M is sum_t x_t lag_t' accumulated over units.
inline Eigen::MatrixXd sample_matrix_normal_kron(Rng& rng, const Eigen::MatrixXd& a_lag,
                                                 const Eigen::MatrixXd& noise_prec,
                                                 const Eigen::MatrixXd& m_cross,
                                                 double prior_mean, double prior_var) {
  const int p = static_cast<int>(a_lag.rows());
  require(noise_prec.rows() == p && m_cross.rows() == p && prior_var > 0.0,
          "sample_matrix_normal_kron: bad inputs");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a_lag);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eo(noise_prec);
  require(ea.info() == Eigen::Success && eo.info() == Eigen::Success,
          "sample_matrix_normal_kron: eigendecomposition failed");
  require(eo.eigenvalues().minCoeff() > 0.0, "sample_matrix_normal_kron: noise precision not PD");
  require(ea.eigenvalues().minCoeff() > -1e-9 * std::max(1.0, ea.eigenvalues().maxCoeff()),
          "sample_matrix_normal_kron: lag Gram not PSD");
  const Eigen::MatrixXd& u = ea.eigenvectors();
  const Eigen::MatrixXd& v = eo.eigenvectors();

  const Eigen::MatrixXd b =
      noise_prec * m_cross + Eigen::MatrixXd::Constant(p, p, prior_mean / prior_var);
  Eigen::MatrixXd g = v.transpose() * b * u;
  Eigen::MatrixXd z(p, p);
  for (int col = 0; col < p; ++col)
    for (int row = 0; row < p; ++row) {
      const double dk =
          1.0 / prior_var + std::max(0.0, ea.eigenvalues()[col]) * eo.eigenvalues()[row];
      g(row, col) /= dk;
      z(row, col) = rnorm(rng) / std::sqrt(dk);
    }
  return v * (g + z) * u.transpose();
}

// Diagonal-coefficient variant: precision is I/prior_var + noise_prec o A
// (Hadamard), right-hand side diag(noise_prec M) + prior pull.
inline Eigen::MatrixXd sample_ar_diagonal(Rng& rng, const Eigen::MatrixXd& a_lag,
                                          const Eigen::MatrixXd& noise_prec,
                                          const Eigen::MatrixXd& m_cross,
                                          double prior_mean, double prior_var) {
  const int p = static_cast<int>(a_lag.rows());
  Eigen::MatrixXd prec = noise_prec.cwiseProduct(a_lag);
  prec.diagonal().array() += 1.0 / prior_var;
  Eigen::VectorXd rhs = (noise_prec * m_cross).diagonal();
  rhs.array() += prior_mean / prior_var;
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  require(llt.info() == Eigen::Success, "sample_ar_diagonal: precision not positive definite");
  const Eigen::VectorXd draw =
      rmvnorm_prec(rng, llt.solve(rhs), Eigen::MatrixXd(llt.matrixL()));
  return draw.asDiagonal();
}

// Node-wise transition matrix: units are node trajectories, lags include the
// initial state.
inline Eigen::MatrixXd sample_phi(Rng& rng, const LatentState& st, const Eigen::MatrixXd& upsilon,
                                  const PriorConfig& prior, PhiStructure structure) {
  const int d = st.d;
  require(upsilon.rows() == d && upsilon.cols() == d, "sample_phi: Upsilon shape");
  Eigen::MatrixXd a_lag = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd m_cross = Eigen::MatrixXd::Zero(d, d);
  for (int t = 0; t < st.T(); ++t) {
    const Eigen::MatrixXd& lag = t == 0 ? st.x0 : st.x[t - 1];
    a_lag.noalias() += lag.transpose() * lag;
    m_cross.noalias() += st.x[t].transpose() * lag;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(upsilon);
  require(llt.info() == Eigen::Success, "sample_phi: Upsilon not positive definite");
  const Eigen::MatrixXd noise_prec = llt.solve(Eigen::MatrixXd::Identity(d, d));
  if (structure == PhiStructure::Diagonal)
    return sample_ar_diagonal(rng, a_lag, noise_prec, m_cross, prior.phi_mean, prior.phi_var);
  return sample_matrix_normal_kron(rng, a_lag, noise_prec, m_cross, prior.phi_mean,
                                   prior.phi_var);
}

// Feature-wise transition matrix: units are feature columns, omega is the
// innovation precision.
inline Eigen::MatrixXd sample_phi_tilde(Rng& rng, const LatentState& st,
                                        const Eigen::MatrixXd& omega, const PriorConfig& prior,
                                        PhiStructure structure) {
  const int n = st.N();
  require(omega.rows() == n && omega.cols() == n, "sample_phi_tilde: Omega shape");
  Eigen::MatrixXd a_lag = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd m_cross = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < st.T(); ++t) {
    const Eigen::MatrixXd& lag = t == 0 ? st.x0 : st.x[t - 1];
    a_lag.noalias() += lag * lag.transpose();
    m_cross.noalias() += st.x[t] * lag.transpose();
  }
  if (structure == PhiStructure::Diagonal)
    return sample_ar_diagonal(rng, a_lag, omega, m_cross, prior.phi_mean, prior.phi_var);
  return sample_matrix_normal_kron(rng, a_lag, omega, m_cross, prior.phi_mean, prior.phi_var);
}

// Node-wise innovation covariance: conjugate inverse Wishart, or independent
// inverse gammas on the diagonal.
inline Eigen::MatrixXd sample_upsilon(Rng& rng, const LatentState& st, const Eigen::MatrixXd& phi,
                                      const PriorConfig& prior, UpsilonStructure structure) {
  const int d = st.d;
  require(phi.rows() == d && phi.cols() == d, "sample_upsilon: Phi shape");
  const double tn = static_cast<double>(st.T()) * st.N();
  if (structure == UpsilonStructure::Diagonal) {
    Eigen::VectorXd ssq = Eigen::VectorXd::Zero(d);
    for (int t = 0; t < st.T(); ++t) {
      const Eigen::MatrixXd& lag = t == 0 ? st.x0 : st.x[t - 1];
      const Eigen::MatrixXd resid = st.x[t] - lag * phi.transpose();
      ssq += resid.array().square().colwise().sum().matrix().transpose();
    }
    Eigen::MatrixXd ups = Eigen::MatrixXd::Zero(d, d);
    for (int ell = 0; ell < d; ++ell)
      ups(ell, ell) = rinvgamma(rng, prior.ig_a + 0.5 * tn, prior.ig_b + 0.5 * ssq[ell]);
    return ups;
  }
  require(structure == UpsilonStructure::Full, "sample_upsilon: horseshoe is feature-wise only");
  Eigen::MatrixXd scale = prior.iw_scale * Eigen::MatrixXd::Identity(d, d);
  for (int t = 0; t < st.T(); ++t) {
    const Eigen::MatrixXd& lag = t == 0 ? st.x0 : st.x[t - 1];
    const Eigen::MatrixXd resid = st.x[t] - lag * phi.transpose();
    scale.noalias() += resid.transpose() * resid;
  }
  const double nu = (prior.iw_nu > 0.0 ? prior.iw_nu : d + 2.0) + tn;
  return rinvwishart(rng, nu, scale);
}

// One column/row conditional update of the horseshoe precision: draws the
// off-diagonal coefficients and the Schur complement for the given index
// against the residual scatter s, leaving par.cov symmetric.
inline void horseshoe_column(Rng& rng, int col, const Eigen::MatrixXd& s, double n_expo,
                             GlobalParams& par) {
  const int n = static_cast<int>(par.cov.rows());
  require(col >= 0 && col < n, "horseshoe_column: column out of range");
  std::vector<int> rest;
  rest.reserve(n - 1);
  for (int a = 0; a < n; ++a)
    if (a != col) rest.push_back(a);
  Eigen::MatrixXd omega_rr(n - 1, n - 1);
  Eigen::VectorXd s_rc(n - 1), local(n - 1);
  for (int a = 0; a < n - 1; ++a) {
    s_rc[a] = s(rest[a], col);
    local[a] = par.varpi(rest[a], col) * par.rho2;
    for (int b = 0; b < n - 1; ++b) omega_rr(a, b) = par.cov(rest[a], rest[b]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt_rr(omega_rr);
  require(llt_rr.info() == Eigen::Success,
          "horseshoe_column: principal block not positive definite at column " +
              std::to_string(col));
  const double s_cc = s(col, col);
  require(s_cc > 0.0, "horseshoe_column: zero residual scatter at column " + std::to_string(col));

  Eigen::MatrixXd c_inv = s_cc * llt_rr.solve(Eigen::MatrixXd::Identity(n - 1, n - 1));
  c_inv = 0.5 * (c_inv + c_inv.transpose());
  c_inv.diagonal() += local.cwiseInverse();
  Eigen::LLT<Eigen::MatrixXd> llt_c(c_inv);
  require(llt_c.info() == Eigen::Success,
          "horseshoe_column: conditional precision failure at column " + std::to_string(col));
  const Eigen::VectorXd beta =
      rmvnorm_prec(rng, llt_c.solve(-s_rc), Eigen::MatrixXd(llt_c.matrixL()));
  const double gamma = rgamma(rng, 0.5 * n_expo + 1.0, 0.5 * s_cc);
  const double diag = gamma + beta.dot(llt_rr.solve(beta));

  for (int a = 0; a < n - 1; ++a) {
    par.cov(rest[a], col) = beta[a];
    par.cov(col, rest[a]) = beta[a];
  }
  par.cov(col, col) = diag;
}

// Residual scatter of the feature-wise transition, shared by the precision
// and coefficient updates.
inline Eigen::MatrixXd featurewise_scatter(const LatentState& st,
                                           const Eigen::MatrixXd& phi_tilde) {
  const int n = st.N();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < st.T(); ++t) {
    const Eigen::MatrixXd& lag = t == 0 ? st.x0 : st.x[t - 1];
    const Eigen::MatrixXd resid = st.x[t] - phi_tilde * lag;
    s.noalias() += resid * resid.transpose();
  }
  return s;
}

// Conjugate feature-wise innovation precision without shrinkage: inverse
// Wishart on the implied covariance, or independent inverse gammas on its
// diagonal. Returns the precision, matching the feature-wise storage.
inline Eigen::MatrixXd sample_omega_featurewise(Rng& rng, const LatentState& st,
                                                const Eigen::MatrixXd& phi_tilde,
                                                const PriorConfig& prior,
                                                UpsilonStructure structure) {
  const int n = st.N();
  require(phi_tilde.rows() == n && phi_tilde.cols() == n, "sample_omega_featurewise: Phi shape");
  const Eigen::MatrixXd s = featurewise_scatter(st, phi_tilde);
  const double td = static_cast<double>(st.T()) * st.d;
  if (structure == UpsilonStructure::Diagonal) {
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      omega(i, i) = 1.0 / rinvgamma(rng, prior.ig_a + 0.5 * td, prior.ig_b + 0.5 * s(i, i));
    return omega;
  }
  require(structure == UpsilonStructure::Full,
          "sample_omega_featurewise: horseshoe has its own update");
  const Eigen::MatrixXd scale = prior.iw_scale * Eigen::MatrixXd::Identity(n, n) + s;
  const double nu = (prior.iw_nu > 0.0 ? prior.iw_nu : n + 2.0) + td;
  const Eigen::MatrixXd cov = rinvwishart(rng, nu, scale);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  require(llt.info() == Eigen::Success, "sample_omega_featurewise: draw not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

// One full column/row sweep of the graphical-horseshoe precision update plus
// its local and global shrinkage hyperparameters. par.cov is the precision
// and is symmetric positive definite on exit; par.varpi holds the squared
// local scales with unit diagonal.
inline void sample_omega_horseshoe(Rng& rng, const LatentState& st,
                                   const Eigen::MatrixXd& phi_tilde, GlobalParams& par,
                                   bool main_text_exponent) {
  const int n = st.N();
  require(par.cov.rows() == n && par.cov.cols() == n, "sample_omega_horseshoe: Omega shape");
  require(par.varpi.rows() == n && par.eta_varpi.rows() == n,
          "sample_omega_horseshoe: local scales shape");
  require(par.rho2 > 0.0, "sample_omega_horseshoe: rho2 must be positive");

  const Eigen::MatrixXd s = featurewise_scatter(st, phi_tilde);
  const double n_expo = main_text_exponent ? static_cast<double>(n) * st.d
                                           : static_cast<double>(st.T()) * st.d;
  for (int col = 0; col < n; ++col) horseshoe_column(rng, col, s, n_expo, par);

  // Local scales and their auxiliaries, upper triangle mirrored.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double w2 = par.cov(i, j) * par.cov(i, j);
      const double vp = rinvgamma(rng, 1.0, 1.0 / par.eta_varpi(i, j) + 0.5 * w2 / par.rho2);
      const double ev = rinvgamma(rng, 1.0, 1.0 + 1.0 / vp);
      par.varpi(i, j) = par.varpi(j, i) = vp;
      par.eta_varpi(i, j) = par.eta_varpi(j, i) = ev;
    }
  double shrink_sum = 0.0;
  const int m_off = n * (n - 1) / 2;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      shrink_sum += par.cov(i, j) * par.cov(i, j) / par.varpi(i, j);
  par.rho2 = rinvgamma(rng, 0.5 * (m_off + 1.0), 1.0 / par.eta_rho + 0.5 * shrink_sum);
  par.eta_rho = rinvgamma(rng, 1.0, 1.0 + 1.0 / par.rho2);
}

}  // namespace dlsm
