#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "dlsm/augmentation.hpp"
#include "dlsm/common.hpp"
#include "dlsm/config.hpp"
#include "dlsm/dist.hpp"
#include "dlsm/iams_tables.hpp"
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/rng.hpp"

namespace dlsm {

// Symmetric block-tridiagonal matrix: T diagonal d x d blocks, block (t+1, t)
// stored in sub(t). The Cholesky factor shares the band, so factorization,
// solves and sampling all cost O(T d^3); nothing larger than d x d per block
// is ever allocated.
class BlockTridiag {
 public:
  BlockTridiag() = default;
  BlockTridiag(int d, int t)
      : d_(d),
        t_(t),
        diag_(static_cast<std::size_t>(std::max(t, 0)), Eigen::MatrixXd::Zero(d, d)),
        sub_(static_cast<std::size_t>(std::max(t - 1, 0)), Eigen::MatrixXd::Zero(d, d)) {
    require(d >= 1 && t >= 1, "BlockTridiag: need d >= 1 and at least one block");
  }

  int block_dim() const { return d_; }
  int blocks() const { return t_; }
  int size() const { return d_ * t_; }

  Eigen::MatrixXd& diag(int t) {
    factored_ = false;
    return diag_[index(t, t_)];
  }
  const Eigen::MatrixXd& diag(int t) const { return diag_[index(t, t_)]; }
  Eigen::MatrixXd& sub(int t) {
    factored_ = false;
    return sub_[index(t, t_ - 1)];
  }
  const Eigen::MatrixXd& sub(int t) const { return sub_[index(t, t_ - 1)]; }

  Eigen::VectorXd matvec(const Eigen::VectorXd& v) const {
    require(v.size() == size(), "BlockTridiag::matvec: length mismatch");
    Eigen::VectorXd out(size());
    for (int t = 0; t < t_; ++t) {
      Eigen::VectorXd w = diag_[static_cast<std::size_t>(t)] * v.segment(t * d_, d_);
      if (t > 0) w.noalias() += sub_[static_cast<std::size_t>(t - 1)] * v.segment((t - 1) * d_, d_);
      if (t + 1 < t_)
        w.noalias() += sub_[static_cast<std::size_t>(t)].transpose() * v.segment((t + 1) * d_, d_);
      out.segment(t * d_, d_) = w;
    }
    return out;
  }

  // Block Cholesky K = L L' with L sharing the band; fails on any
  // non-positive-definite or nonfinite block (an assembly bug upstream).
  void factorize() {
    ldiag_.assign(diag_.size(), Eigen::MatrixXd());
    lsub_.assign(sub_.size(), Eigen::MatrixXd());
    log_det_ = 0.0;
    for (int t = 0; t < t_; ++t) {
      Eigen::MatrixXd s = diag_[static_cast<std::size_t>(t)];
      if (t > 0) {
        lsub_[static_cast<std::size_t>(t - 1)] =
            ldiag_[static_cast<std::size_t>(t - 1)]
                .transpose()
                .triangularView<Eigen::Upper>()
                .solve<Eigen::OnTheRight>(sub_[static_cast<std::size_t>(t - 1)]);
        s.noalias() -= lsub_[static_cast<std::size_t>(t - 1)] *
                       lsub_[static_cast<std::size_t>(t - 1)].transpose();
      }
      require(s.allFinite(), "BlockTridiag: nonfinite block");
      Eigen::LLT<Eigen::MatrixXd> llt(s);
      require(llt.info() == Eigen::Success, "BlockTridiag: not positive definite");
      ldiag_[static_cast<std::size_t>(t)] = llt.matrixL();
      log_det_ += 2.0 * ldiag_[static_cast<std::size_t>(t)].diagonal().array().log().sum();
    }
    factored_ = true;
  }

  bool factored() const { return factored_; }

  double log_det() const {
    require(factored_, "BlockTridiag::log_det before factorize");
    return log_det_;
  }

  // (L L')^{-1} b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd v = forward_solve(b);
    return back_substitute(v);
  }

  // L'^{-1} z: maps iid standard normals to covariance (L L')^{-1}.
  Eigen::VectorXd back_substitute(const Eigen::VectorXd& z) const {
    require(factored_, "BlockTridiag::back_substitute before factorize");
    require(z.size() == size(), "BlockTridiag::back_substitute: length mismatch");
    Eigen::VectorXd x(size());
    for (int t = t_ - 1; t >= 0; --t) {
      Eigen::VectorXd rhs = z.segment(t * d_, d_);
      if (t + 1 < t_)
        rhs.noalias() -=
            lsub_[static_cast<std::size_t>(t)].transpose() * x.segment((t + 1) * d_, d_);
      x.segment(t * d_, d_) = ldiag_[static_cast<std::size_t>(t)]
                                  .transpose()
                                  .triangularView<Eigen::Upper>()
                                  .solve(rhs);
    }
    return x;
  }

 private:
  Eigen::VectorXd forward_solve(const Eigen::VectorXd& b) const {
    require(factored_, "BlockTridiag::solve before factorize");
    require(b.size() == size(), "BlockTridiag::solve: length mismatch");
    Eigen::VectorXd v(size());
    for (int t = 0; t < t_; ++t) {
      Eigen::VectorXd rhs = b.segment(t * d_, d_);
      if (t > 0)
        rhs.noalias() -= lsub_[static_cast<std::size_t>(t - 1)] * v.segment((t - 1) * d_, d_);
      v.segment(t * d_, d_) =
          ldiag_[static_cast<std::size_t>(t)].triangularView<Eigen::Lower>().solve(rhs);
    }
    return v;
  }

  static std::size_t index(int t, int n) {
    require(t >= 0 && t < n, "BlockTridiag: block index out of range");
    return static_cast<std::size_t>(t);
  }

  int d_ = 0, t_ = 0;
  std::vector<Eigen::MatrixXd> diag_, sub_;
  std::vector<Eigen::MatrixXd> ldiag_, lsub_;
  double log_det_ = 0.0;
  bool factored_ = false;
};

// One pseudo-observation attached to time index t (0-based): value ~
// N(g' x_t, variance) once the trajectory owner's contribution is isolated.
struct LikelihoodRow {
  int t;
  Eigen::VectorXd g;
  double value;
  double variance;
};

// Gaussian system for one node's stacked trajectory (time-major, feature
// inner): prior precision and mean plus pseudo-observation rows; prepare()
// forms the posterior band and mean.
struct TrajectorySystem {
  BlockTridiag K;
  Eigen::VectorXd m;
  std::vector<LikelihoodRow> rows;
  BlockTridiag K_hat;
  Eigen::VectorXd mean;
  bool prepared = false;

  void prepare() {
    const int d = K.block_dim(), blocks = K.blocks();
    require(m.size() == K.size(), "TrajectorySystem: prior mean length mismatch");
    Eigen::VectorXd rhs = K.matvec(m);
    K_hat = K;
    for (const auto& row : rows) {
      require(row.t >= 0 && row.t < blocks && row.g.size() == d,
              "TrajectorySystem: row shape mismatch");
      require(row.variance > 0.0 && std::isfinite(row.value),
              "TrajectorySystem: bad pseudo-observation");
      K_hat.diag(row.t).noalias() += (row.g * row.g.transpose()) / row.variance;
      rhs.segment(row.t * d, d) += row.g * (row.value / row.variance);
    }
    K_hat.factorize();
    mean = K_hat.solve(rhs);
    prepared = true;
  }
};

// Exact draw from N(mean, K_hat^{-1}) through the banded factor.
inline Eigen::VectorXd sample_trajectory(Rng& rng, TrajectorySystem& sys) {
  if (!sys.prepared) sys.prepare();
  Eigen::VectorXd z(sys.K_hat.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rnorm(rng);
  return sys.mean + sys.K_hat.back_substitute(z);
}

// Pseudo-observation rows for node i: every dyad (i,j) with w=1 contributes
// one row when y=0 and two when y>0; the fixed effects are subtracted here so
// the row mean is x_{j:,t}' x_{i:,t}.
inline std::vector<LikelihoodRow> assemble_likelihood(int i, const NetworkSeries& data,
                                                      const GlobalParams& par,
                                                      const LatentState& st,
                                                      const AugmentedState& aug,
                                                      MixtureTables& tables) {
  const int n = data.N, t_len = data.T;
  require(i >= 0 && i < n && st.T() == t_len && st.N() == n,
          "assemble_likelihood: shape mismatch");
  require(par.alpha.size() == n, "assemble_likelihood: alpha length mismatch");
  std::vector<LikelihoodRow> rows;
  const MixtureComponents& one = tables.lookup(1);
  for (int t = 0; t < t_len; ++t) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const int k = dyad_index(n, std::min(i, j), std::max(i, j));
      if (aug.w(k, t) == 0) continue;
      const long y = data.counts(k, t);
      const double shift = par.alpha[i] + par.alpha[j];
      const Eigen::VectorXd g = st.x[static_cast<std::size_t>(t)].row(j).transpose();
      const PseudoObservation p1 = pseudo_observation(aug.tau1(k, t), aug.r1(k, t), one);
      rows.push_back({t, g, p1.value - shift, p1.variance});
      if (y > 0) {
        const PseudoObservation p2 =
            pseudo_observation(aug.tau2(k, t), aug.r2(k, t), tables.lookup(y));
        rows.push_back({t, g, p2.value - shift, p2.variance});
      }
    }
  }
  return rows;
}

// Node-wise prior of the stacked trajectory given x0: banded precision of the
// VAR(1) path and mean m_t = Phi^t x0. Omega0 never enters the band once x0
// is conditioned on; it is only checked here.
inline TrajectorySystem prior_precision_nodewise(const Eigen::MatrixXd& phi,
                                                 const Eigen::MatrixXd& upsilon,
                                                 const Eigen::VectorXd& x0_i,
                                                 const Eigen::MatrixXd& omega0, int t_len) {
  const int d = static_cast<int>(phi.rows());
  require(phi.cols() == d && upsilon.rows() == d && upsilon.cols() == d && x0_i.size() == d &&
              omega0.rows() == d && omega0.cols() == d && t_len >= 1,
          "prior_precision_nodewise: shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> ups(upsilon);
  require(ups.info() == Eigen::Success, "prior_precision_nodewise: Upsilon not positive definite");
  require(Eigen::LLT<Eigen::MatrixXd>(omega0).info() == Eigen::Success,
          "prior_precision_nodewise: Omega0 not positive definite");
  const Eigen::MatrixXd omega = ups.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd cross = omega * phi;
  const Eigen::MatrixXd ridge = phi.transpose() * cross;

  TrajectorySystem sys;
  sys.K = BlockTridiag(d, t_len);
  for (int t = 0; t < t_len; ++t) {
    sys.K.diag(t) = t + 1 < t_len ? (omega + ridge).eval() : omega;
    if (t + 1 < t_len) sys.K.sub(t) = -cross;
  }
  sys.m.resize(d * t_len);
  Eigen::VectorXd cur = x0_i;
  for (int t = 0; t < t_len; ++t) {
    cur = phi * cur;
    sys.m.segment(t * d, d) = cur;
  }
  return sys;
}

// Products shared by every node's feature-wise conditional within one sweep.
struct FeatureWiseCache {
  Eigen::MatrixXd omega;                    // Omega~
  Eigen::MatrixXd forward;                  // Omega~ Phi~; block (t+1, t) is -forward
  Eigen::MatrixXd mid;                      // Omega~ + Phi~' Omega~ Phi~
  std::vector<Eigen::MatrixXd> prior_mean;  // Phi~^t x0 for t = 1..T
};

inline FeatureWiseCache featurewise_cache(const Eigen::MatrixXd& phi_tilde,
                                          const Eigen::MatrixXd& omega_tilde,
                                          const Eigen::MatrixXd& x0, int t_len) {
  const int n = static_cast<int>(omega_tilde.rows());
  require(phi_tilde.rows() == n && phi_tilde.cols() == n && omega_tilde.cols() == n &&
              x0.rows() == n && t_len >= 1,
          "featurewise_cache: shape mismatch");
  FeatureWiseCache c;
  c.omega = omega_tilde;
  c.forward = omega_tilde * phi_tilde;
  c.mid = omega_tilde + phi_tilde.transpose() * c.forward;
  c.prior_mean.reserve(static_cast<std::size_t>(t_len));
  Eigen::MatrixXd cur = x0;
  for (int t = 0; t < t_len; ++t) {
    cur = phi_tilde * cur;
    c.prior_mean.push_back(cur);
  }
  return c;
}

// Feature-wise prior conditional of node i given all other nodes: the node-i
// principal block of the joint band (features decouple, so each block is a
// scalar times the identity) and the mean shifted by the coupling to the
// other nodes' deviations. The joint NdT precision is never materialized.
inline TrajectorySystem prior_conditional_featurewise(const FeatureWiseCache& cache,
                                                      const LatentState& st, int i) {
  const int n = st.N(), d = st.d, t_len = st.T();
  require(cache.omega.rows() == n && static_cast<int>(cache.prior_mean.size()) == t_len &&
              i >= 0 && i < n && t_len >= 1,
          "prior_conditional_featurewise: shape mismatch");
  require(cache.prior_mean[0].cols() == d, "prior_conditional_featurewise: dimension mismatch");

  TrajectorySystem sys;
  sys.K = BlockTridiag(d, t_len);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  for (int t = 0; t < t_len; ++t) {
    sys.K.diag(t) = (t + 1 < t_len ? cache.mid(i, i) : cache.omega(i, i)) * eye;
    if (t + 1 < t_len) sys.K.sub(t) = -cache.forward(i, i) * eye;
  }

  // Deviations of the other nodes from the prior path, node i zeroed so the
  // row products below give exactly the i-to-others coupling term.
  std::vector<Eigen::MatrixXd> dev(static_cast<std::size_t>(t_len));
  Eigen::VectorXd mu_i(d * t_len);
  for (int t = 0; t < t_len; ++t) {
    const Eigen::MatrixXd& mu = cache.prior_mean[static_cast<std::size_t>(t)];
    mu_i.segment(t * d, d) = mu.row(i).transpose();
    dev[static_cast<std::size_t>(t)] = st.x[static_cast<std::size_t>(t)] - mu;
    dev[static_cast<std::size_t>(t)].row(i).setZero();
  }
  Eigen::VectorXd coupling(d * t_len);
  for (int t = 0; t < t_len; ++t) {
    Eigen::RowVectorXd w =
        (t + 1 < t_len ? cache.mid.row(i) : cache.omega.row(i)) * dev[static_cast<std::size_t>(t)];
    if (t > 0) w.noalias() -= cache.forward.row(i) * dev[static_cast<std::size_t>(t - 1)];
    if (t + 1 < t_len)
      w.noalias() -= cache.forward.col(i).transpose() * dev[static_cast<std::size_t>(t + 1)];
    coupling.segment(t * d, d) = w.transpose();
  }

  BlockTridiag fac = sys.K;
  fac.factorize();
  sys.m = mu_i - fac.solve(coupling);
  return sys;
}

inline TrajectorySystem prior_conditional_featurewise(const Eigen::MatrixXd& phi_tilde,
                                                      const Eigen::MatrixXd& omega_tilde,
                                                      const LatentState& st, int i) {
  return prior_conditional_featurewise(featurewise_cache(phi_tilde, omega_tilde, st.x0, st.T()),
                                       st, i);
}

// Flat position of (node i, feature l, time index t) in the joint state
// vector stacked time-major with features inner and nodes innermost.
inline int joint_index(int n, int d, int i, int ell, int t) { return (t * d + ell) * n + i; }

struct JointIndex {
  int i, ell, t;
};

inline JointIndex joint_index_inverse(int n, int d, int k) {
  require(n >= 1 && d >= 1 && k >= 0, "joint_index_inverse: bad arguments");
  return {k % n, (k / n) % d, k / (n * d)};
}

// Position of (feature l, time index t) inside one node's stacked trajectory.
inline int trajectory_index(int d, int ell, int t) { return t * d + ell; }

inline void scatter_trajectory(const Eigen::VectorXd& traj, int i, LatentState& st) {
  const int d = st.d;
  require(traj.size() == d * st.T(), "scatter_trajectory: length mismatch");
  for (int t = 0; t < st.T(); ++t)
    st.x[static_cast<std::size_t>(t)].row(i) = traj.segment(t * d, d).transpose();
}

inline Eigen::VectorXd gather_trajectory(const LatentState& st, int i) {
  const int d = st.d;
  Eigen::VectorXd traj(d * st.T());
  for (int t = 0; t < st.T(); ++t)
    traj.segment(t * d, d) = st.x[static_cast<std::size_t>(t)].row(i).transpose();
  return traj;
}

// Posterior mean and shared precision factor of the initial-state
// conditional. Node-wise the (d x d) precision acts on each node's row;
// feature-wise the (N x N) precision acts on each feature column.
struct InitialStateConditional {
  Eigen::MatrixXd mean;   // N x d
  Eigen::MatrixXd lower;  // Cholesky factor of the shared precision
  bool per_node = true;
};

inline InitialStateConditional initial_state_conditional(const GlobalParams& par,
                                                         const ModelConfig& cfg,
                                                         const LatentState& st) {
  const int n = st.N(), d = st.d;
  require(st.T() >= 1, "initial_state_conditional: no states");
  const double v0 = cfg.prior.x0_var, m0 = cfg.prior.x0_mean;
  InitialStateConditional out;
  if (cfg.parametrization == Parametrization::NodeWise) {
    require(par.phi.rows() == d && par.cov.rows() == d,
            "initial_state_conditional: parameter shape mismatch");
    Eigen::LLT<Eigen::MatrixXd> ups(par.cov);
    require(ups.info() == Eigen::Success,
            "initial_state_conditional: Upsilon not positive definite");
    const Eigen::MatrixXd cross = ups.solve(par.phi);  // Upsilon^{-1} Phi
    Eigen::MatrixXd prec = par.phi.transpose() * cross;
    prec.diagonal().array() += 1.0 / v0;
    Eigen::LLT<Eigen::MatrixXd> post(prec);
    require(post.info() == Eigen::Success,
            "initial_state_conditional: precision not positive definite");
    out.lower = post.matrixL();
    out.per_node = true;
    out.mean.resize(n, d);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd rhs = cross.transpose() * st.x[0].row(i).transpose();
      rhs.array() += m0 / v0;
      out.mean.row(i) = post.solve(rhs).transpose();
    }
  } else {
    require(par.phi.rows() == n && par.cov.rows() == n,
            "initial_state_conditional: parameter shape mismatch");
    const Eigen::MatrixXd forward = par.cov * par.phi;  // cov holds the precision Omega~
    Eigen::MatrixXd prec = par.phi.transpose() * forward;
    prec.diagonal().array() += 1.0 / v0;
    Eigen::LLT<Eigen::MatrixXd> post(prec);
    require(post.info() == Eigen::Success,
            "initial_state_conditional: precision not positive definite");
    out.lower = post.matrixL();
    out.per_node = false;
    out.mean.resize(n, d);
    for (int ell = 0; ell < d; ++ell) {
      Eigen::VectorXd rhs = forward.transpose() * st.x[0].col(ell);
      rhs.array() += m0 / v0;
      out.mean.col(ell) = post.solve(rhs);
    }
  }
  return out;
}

inline void sample_initial_state(Rng& rng, const GlobalParams& par, const ModelConfig& cfg,
                                 LatentState& st) {
  const InitialStateConditional c = initial_state_conditional(par, cfg, st);
  if (c.per_node) {
    for (int i = 0; i < st.N(); ++i)
      st.x0.row(i) = rmvnorm_prec(rng, c.mean.row(i).transpose(), c.lower).transpose();
  } else {
    for (int ell = 0; ell < st.d; ++ell)
      st.x0.col(ell) = rmvnorm_prec(rng, c.mean.col(ell), c.lower);
  }
}

}  // namespace dlsm
