#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dlsm/common.hpp"
#include "dlsm/config.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/special.hpp"

namespace dlsm {

struct LatentState {
  int d = 0;
  std::vector<Eigen::MatrixXd> x;  // T entries, N x d; x[t](i, :) is node i at time t+1
  Eigen::MatrixXd x0;              // N x d

  static LatentState zeros(int n, int d, int t) {
    LatentState s;
    s.d = d;
    s.x.assign(static_cast<std::size_t>(t), Eigen::MatrixXd::Zero(n, d));
    s.x0 = Eigen::MatrixXd::Zero(n, d);
    return s;
  }
  int T() const { return static_cast<int>(x.size()); }
  int N() const { return static_cast<int>(x0.rows()); }
};

struct GlobalParams {
  Eigen::VectorXd alpha;      // N
  Eigen::MatrixXd beta;       // N x L
  Eigen::MatrixXd phi;        // d x d (node-wise) or N x N (feature-wise)
  Eigen::MatrixXd cov;        // Upsilon d x d (node-wise) or precision Omega~ N x N (feature-wise)
  Eigen::MatrixXd varpi;      // horseshoe local scales (feature-wise only), N x N
  Eigen::MatrixXd eta_varpi;  // their IG latents
  double rho2 = 1.0;
  double eta_rho = 1.0;
};

// tau2 / r2 slots are valid only where y > 0; r slots hold -1 when absent.
struct AugmentedState {
  Eigen::ArrayXXd tau1, tau2, z;  // n_dyads x T
  Eigen::ArrayXXi r1, r2, w;
  Eigen::ArrayXd gamma_loc_tilde, gamma_loc_star;      // per time slice
  Eigen::ArrayXd gamma_scale_tilde, gamma_scale_star;  // per time slice

  static AugmentedState zeros(int n, int t) {
    AugmentedState a;
    const int m = n_dyads(n);
    a.tau1 = Eigen::ArrayXXd::Zero(m, t);
    a.tau2 = Eigen::ArrayXXd::Zero(m, t);
    a.z = Eigen::ArrayXXd::Zero(m, t);
    a.r1 = Eigen::ArrayXXi::Constant(m, t, -1);
    a.r2 = Eigen::ArrayXXi::Constant(m, t, -1);
    a.w = Eigen::ArrayXXi::Ones(m, t);
    a.gamma_loc_tilde = Eigen::ArrayXd::Zero(t);
    a.gamma_loc_star = Eigen::ArrayXd::Zero(t);
    a.gamma_scale_tilde = Eigen::ArrayXd::Ones(t);
    a.gamma_scale_star = Eigen::ArrayXd::Ones(t);
    return a;
  }
};

inline double log_intensity(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& x_t, int i, int j) {
  require(i >= 0 && j >= 0 && i < alpha.size() && j < alpha.size() && i < x_t.rows() &&
              j < x_t.rows(),
          "log_intensity: index out of range");
  return alpha[i] + alpha[j] + x_t.row(i).dot(x_t.row(j));
}

inline double zero_inflation_probability(const Eigen::VectorXd& beta_i, const Eigen::VectorXd& beta_j,
                                         const Eigen::VectorXd& v_i, const Eigen::VectorXd& v_j) {
  require(beta_i.size() == v_i.size() && beta_j.size() == v_j.size(),
          "zero_inflation_probability: covariate length mismatch");
  return norm_cdf(beta_i.dot(v_i) + beta_j.dot(v_j));
}

// Probit mean of the utility for dyad (i,j) at time t.
inline double utility_mean(const GlobalParams& par, const NetworkSeries& data, int t, int i, int j) {
  return par.beta.row(i).dot(data.v[static_cast<std::size_t>(t)].row(i)) +
         par.beta.row(j).dot(data.v[static_cast<std::size_t>(t)].row(j));
}

}  // namespace dlsm
