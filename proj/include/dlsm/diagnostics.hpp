#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "dlsm/common.hpp"
#include "dlsm/gibbs.hpp"
#include "dlsm/special.hpp"

namespace dlsm {

struct EssResult {
  double ess = 0.0;
  bool constant_chain = false;
};

// ESS = n / (1 + 2 sum rho_k) with the autocorrelation sum truncated at the
// initial positive sequence of lag-pair sums; the spectral variance is
// floored at a tenth of the marginal variance, capping super-efficient
// chains at 10 n.
inline EssResult effective_sample_size(const std::vector<double>& chain) {
  const std::size_t n = chain.size();
  require(n >= 10, "effective_sample_size: need at least 10 draws");
  const auto [lo, hi] = std::minmax_element(chain.begin(), chain.end());
  if (*lo == *hi) return {static_cast<double>(n), true};
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(n);
  auto gamma = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) s += (chain[t] - mean) * (chain[t + k] - mean);
    return s / static_cast<double>(n);
  };
  const double g0 = gamma(0);
  if (g0 <= 0.0) return {static_cast<double>(n), true};

  double pair_sum = 0.0;
  for (std::size_t m = 0; 2 * m < n; ++m) {
    const double g = gamma(2 * m) + (2 * m + 1 < n ? gamma(2 * m + 1) : 0.0);
    if (g <= 0.0) break;
    pair_sum += g;
  }
  const double sigma2 = std::max(2.0 * pair_sum - g0, 0.1 * g0);
  return {static_cast<double>(n) * g0 / sigma2, false};
}

struct GewekeResult {
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;
};

namespace detail {

// Variance of a window mean estimated from batch means.
inline double window_mean_variance(const double* x, std::size_t len) {
  const std::size_t n_batch = std::min<std::size_t>(30, len / 2);
  const std::size_t width = len / n_batch;
  double grand = 0.0;
  std::vector<double> bm(n_batch);
  for (std::size_t b = 0; b < n_batch; ++b) {
    double s = 0.0;
    for (std::size_t t = 0; t < width; ++t) s += x[b * width + t];
    bm[b] = s / static_cast<double>(width);
    grand += bm[b];
  }
  grand /= static_cast<double>(n_batch);
  double v = 0.0;
  for (double m : bm) v += (m - grand) * (m - grand);
  v /= static_cast<double>(n_batch - 1);
  return v / static_cast<double>(n_batch);
}

}  // namespace detail

// Convergence score comparing an early window against a late window, with
// batch-means standard errors and a two-sided p-value.
inline GewekeResult geweke_cd(const std::vector<double>& chain, double first_frac = 0.1,
                              double last_frac = 0.5) {
  const std::size_t n = chain.size();
  require(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0,
          "geweke_cd: window fractions must be positive and non-overlapping");
  const std::size_t n_a = static_cast<std::size_t>(first_frac * static_cast<double>(n));
  const std::size_t n_b = static_cast<std::size_t>(last_frac * static_cast<double>(n));
  require(n_a >= 20 && n_b >= 20, "geweke_cd: windows too short");

  const double* a = chain.data();
  const double* b = chain.data() + (n - n_b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t t = 0; t < n_a; ++t) ma += a[t];
  for (std::size_t t = 0; t < n_b; ++t) mb += b[t];
  ma /= static_cast<double>(n_a);
  mb /= static_cast<double>(n_b);
  const double va = detail::window_mean_variance(a, n_a);
  const double vb = detail::window_mean_variance(b, n_b);
  GewekeResult out;
  if (va + vb <= 0.0) {
    out.degenerate = true;
    return out;
  }
  out.z = (ma - mb) / std::sqrt(va + vb);
  out.p = 2.0 * norm_sf(std::fabs(out.z));
  return out;
}

struct ProcrustesRotation {
  Eigen::MatrixXd rotation;
  bool degenerate = false;
};

// Orthogonal matrix (rotation or reflection) minimizing ||A R - B||_F; a
// rank-deficient cross-product leaves the rotation undetermined, so the
// identity is returned with the flag set.
inline ProcrustesRotation procrustes_rotation(const Eigen::MatrixXd& a,
                                              const Eigen::MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols() && a.cols() >= 1,
          "procrustes_rotation: shape mismatch");
  const Eigen::MatrixXd cross = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  ProcrustesRotation out;
  if (sv[0] <= 0.0 || sv[sv.size() - 1] <= 1e-12 * sv[0]) {
    out.rotation = Eigen::MatrixXd::Identity(a.cols(), a.cols());
    out.degenerate = true;
    return out;
  }
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  return out;
}

inline Eigen::MatrixXd procrustes_align(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a * procrustes_rotation(a, b).rotation;
}

inline double matrix_rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols() && a.size() > 0,
          "matrix_rmse: shape mismatch");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// Per-node unit directions and magnitudes of one latent slice; zero-norm
// nodes keep a zero direction and are flagged.
struct CircularProjection {
  Eigen::MatrixXd direction;  // N x d
  Eigen::VectorXd magnitude;  // N
  std::vector<bool> undefined;
};

inline CircularProjection circular_projection(const Eigen::MatrixXd& x) {
  require(x.cols() >= 1, "circular_projection: need d >= 1");
  CircularProjection out;
  out.direction = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  out.magnitude.resize(x.rows());
  out.undefined.assign(static_cast<std::size_t>(x.rows()), false);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    out.magnitude[i] = norm;
    if (norm > 0.0) out.direction.row(i) = x.row(i) / norm;
    else out.undefined[static_cast<std::size_t>(i)] = true;
  }
  return out;
}

// Posterior probability of a structural zero per dyad and time: Monte Carlo
// average of 1 - w. The sampler keeps w pinned at 1 on positive counts, so
// the average is already zero there; the data-aware overload forces it.
inline Eigen::ArrayXXd structural_zero_map(const ChainOutput& chain) {
  require(chain.n_kept >= 1 && chain.w.size() > 0, "structural_zero_map: no retained w draws");
  const int m = n_dyads(chain.N);
  require(chain.w.cols() == static_cast<long>(m) * chain.T, "structural_zero_map: shape mismatch");
  Eigen::ArrayXXd prob(m, chain.T);
  for (int t = 0; t < chain.T; ++t)
    for (int k = 0; k < m; ++k) {
      double s = 0.0;
      for (long h = 0; h < chain.n_kept; ++h)
        s += 1 - chain.w(h, static_cast<long>(t) * m + k);
      prob(k, t) = s / static_cast<double>(chain.n_kept);
    }
  return prob;
}

inline Eigen::ArrayXXd structural_zero_map(const ChainOutput& chain, const NetworkSeries& data) {
  require(chain.N == data.N && chain.T == data.T, "structural_zero_map: data shape mismatch");
  Eigen::ArrayXXd prob = structural_zero_map(chain);
  for (int t = 0; t < data.T; ++t)
    for (int k = 0; k < prob.rows(); ++k)
      if (data.counts(k, t) > 0) prob(k, t) = 0.0;
  return prob;
}

// Adaptive random-walk single-site MH over (alpha, x) for the static Poisson
// eigenmodel; the efficiency yardstick for the augmentation sampler. Each
// site keeps its own proposal scale, nudged toward 23% acceptance during
// burn-in and frozen afterwards.
inline ChainOutput baseline_static_mh(const NetworkSeries& data, int d,
                                      const ModelConfig& cfg_in) {
  const auto t_start = std::chrono::steady_clock::now();
  require(d >= 1, "baseline_static_mh: need d >= 1");
  ModelConfig cfg = cfg_in;
  cfg.dynamic = false;
  cfg.zero_inflated = false;
  cfg.dimension_mode = DimensionMode::Fixed;
  cfg.d = d;
  cfg.validate();

  const int n = data.N;
  const int t_len = data.T;
  const double sa2 = cfg.prior.sigma_alpha2;
  Rng rng(cfg.seed, 1);

  Eigen::VectorXd alpha(n);
  for (int i = 0; i < n; ++i) alpha[i] = 0.1 * std::sqrt(sa2) * rnorm(rng);
  LatentState st = LatentState::zeros(n, d, t_len);
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < n; ++i)
      for (int ell = 0; ell < d; ++ell) st.x[static_cast<std::size_t>(t)](i, ell) = 0.1 * rnorm(rng);

  Eigen::VectorXd ls_alpha = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::MatrixXd> ls_x(static_cast<std::size_t>(t_len),
                                    Eigen::MatrixXd::Zero(n, d));

  ChainOutput out;
  out.config_text = cfg.serialize();
  out.config_hash = cfg.hash();
  out.seed = cfg.seed;
  out.N = n;
  out.L = data.L;
  out.T = t_len;
  const long n_target = (cfg.n_iter - cfg.burn_in) / cfg.thin;
  out.alpha.setZero(n_target, n);
  out.beta.setZero(n_target, static_cast<long>(n) * data.L);
  out.d.assign(static_cast<std::size_t>(n_target), d);

  // Poisson log-likelihood change for node i when eta shifts by delta_eta on
  // its dyads at one slice.
  auto node_loglik = [&](int t, int i, double alpha_i, const Eigen::RowVectorXd& xi) {
    const Eigen::MatrixXd& xt = st.x[static_cast<std::size_t>(t)];
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double eta = alpha_i + alpha[j] + xi.dot(xt.row(j));
      const long y = data.counts(dyad_index(n, std::min(i, j), std::max(i, j)), t);
      s += static_cast<double>(y) * eta - std::exp(eta);
    }
    return s;
  };

  long kept = 0;
  for (long h = 1; h <= cfg.n_iter; ++h) {
    const bool adapting = h <= cfg.burn_in;
    const double gain = 1.0 / std::sqrt(static_cast<double>(h));

    for (int i = 0; i < n; ++i) {
      const double prop = alpha[i] + std::exp(ls_alpha[i]) * rnorm(rng);
      double delta = -0.5 * (prop * prop - alpha[i] * alpha[i]) / sa2;
      for (int t = 0; t < t_len; ++t)
        delta += node_loglik(t, i, prop, st.x[static_cast<std::size_t>(t)].row(i)) -
                 node_loglik(t, i, alpha[i], st.x[static_cast<std::size_t>(t)].row(i));
      const double acc = std::min(1.0, std::exp(delta));
      if (runif(rng) < acc) alpha[i] = prop;
      if (adapting) ls_alpha[i] += gain * (acc - 0.23);
    }

    for (int t = 0; t < t_len; ++t) {
      Eigen::MatrixXd& xt = st.x[static_cast<std::size_t>(t)];
      for (int i = 0; i < n; ++i)
        for (int ell = 0; ell < d; ++ell) {
          Eigen::RowVectorXd xi = xt.row(i);
          const double cur = xi[ell];
          const double prop = cur + std::exp(ls_x[static_cast<std::size_t>(t)](i, ell)) * rnorm(rng);
          double delta = -0.5 * (prop * prop - cur * cur);
          const double base = node_loglik(t, i, alpha[i], xi);
          xi[ell] = prop;
          delta += node_loglik(t, i, alpha[i], xi) - base;
          const double acc = std::min(1.0, std::exp(delta));
          if (runif(rng) < acc) xt(i, ell) = prop;
          if (adapting) ls_x[static_cast<std::size_t>(t)](i, ell) += gain * (acc - 0.23);
        }
    }

    if (h > cfg.burn_in && (h - cfg.burn_in) % cfg.thin == 0) {
      out.alpha.row(kept) = alpha.transpose();
      out.phi.push_back(Eigen::MatrixXd::Zero(d, d));
      out.cov.push_back(Eigen::MatrixXd::Identity(d, d));
      if (cfg.store_x && kept % cfg.x_thin == 0) {
        out.x.push_back(st);
        ++out.n_kept_x;
      }
      ++kept;
    }
    if (cfg.progress_every > 0 && h % cfg.progress_every == 0)
      std::fprintf(stderr, "mh baseline: %ld/%ld\n", h, cfg.n_iter);
  }
  out.n_kept = kept;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// Column of one scalar series per retained draw, for diagnostics over stored
// chains.
inline std::vector<double> alpha_series(const ChainOutput& chain, int i) {
  require(i >= 0 && i < chain.N && chain.n_kept >= 1, "alpha_series: bad node index");
  std::vector<double> s(static_cast<std::size_t>(chain.n_kept));
  for (long h = 0; h < chain.n_kept; ++h) s[static_cast<std::size_t>(h)] = chain.alpha(h, i);
  return s;
}

inline std::vector<double> latent_series(const ChainOutput& chain, int t, int i, int ell) {
  require(chain.n_kept_x >= 1, "latent_series: no stored trajectories");
  std::vector<double> s;
  s.reserve(static_cast<std::size_t>(chain.n_kept_x));
  for (const auto& st : chain.x) {
    require(t >= 0 && t < st.T() && i >= 0 && i < st.N() && ell >= 0 && ell < st.d,
            "latent_series: index out of range");
    s.push_back(st.x[static_cast<std::size_t>(t)](i, ell));
  }
  return s;
}

namespace detail {

// Stored draws at the modal dimension, stacked (t, node) x d and aligned to
// the first such draw.
struct AlignedDraws {
  int d_mode = 0;
  int n = 0;
  int t_len = 0;
  std::vector<Eigen::MatrixXd> stacks;
};

inline AlignedDraws aligned_latent_draws(const ChainOutput& chain) {
  require(chain.n_kept_x >= 1, "aligned_latent_draws: no stored trajectories");
  std::vector<long> freq;
  for (const auto& st : chain.x) {
    if (freq.size() < static_cast<std::size_t>(st.d) + 1) freq.resize(st.d + 1, 0);
    ++freq[static_cast<std::size_t>(st.d)];
  }
  AlignedDraws out;
  out.d_mode = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());

  const LatentState* ref = nullptr;
  for (const auto& st : chain.x)
    if (st.d == out.d_mode) {
      ref = &st;
      break;
    }
  out.n = ref->N();
  out.t_len = ref->T();
  Eigen::MatrixXd ref_stack(static_cast<long>(out.n) * out.t_len, out.d_mode);
  for (int t = 0; t < out.t_len; ++t)
    ref_stack.middleRows(static_cast<long>(t) * out.n, out.n) = ref->x[static_cast<std::size_t>(t)];

  for (const auto& st : chain.x) {
    if (st.d != out.d_mode) continue;
    Eigen::MatrixXd stack(ref_stack.rows(), out.d_mode);
    for (int t = 0; t < out.t_len; ++t)
      stack.middleRows(static_cast<long>(t) * out.n, out.n) = st.x[static_cast<std::size_t>(t)];
    out.stacks.push_back(procrustes_align(stack, ref_stack));
  }
  return out;
}

}  // namespace detail

// Posterior mean of the aligned latent stack at the modal dimension,
// (t, node) x d.
struct AlignedLatentMean {
  int d = 0;
  int n = 0;
  int t_len = 0;
  Eigen::MatrixXd mean;
};

inline AlignedLatentMean aligned_latent_mean(const ChainOutput& chain) {
  const auto draws = detail::aligned_latent_draws(chain);
  AlignedLatentMean out{draws.d_mode, draws.n, draws.t_len,
                        Eigen::MatrixXd::Zero(static_cast<long>(draws.n) * draws.t_len,
                                              draws.d_mode)};
  for (const auto& s : draws.stacks) out.mean += s;
  out.mean /= static_cast<double>(draws.stacks.size());
  return out;
}

// Long-format trajectory summary `node,t,dim,mean,lo,hi` over the stored
// draws at the modal dimension, each aligned to the first such draw.
inline void export_trajectory_bands(const std::string& path, const ChainOutput& chain,
                                    double lo_q = 0.025, double hi_q = 0.975) {
  const auto draws = detail::aligned_latent_draws(chain);
  const auto& aligned = draws.stacks;
  const int n = draws.n;
  const int t_len = draws.t_len;
  const int d_mode = draws.d_mode;

  std::ofstream f(path);
  require(f.good(), "cannot write '" + path + "'");
  f << "node,t,dim,mean,lo,hi\n";
  std::vector<double> v(aligned.size());
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < n; ++i)
      for (int ell = 0; ell < d_mode; ++ell) {
        for (std::size_t k = 0; k < aligned.size(); ++k)
          v[k] = aligned[k](static_cast<long>(t) * n + i, ell);
        std::sort(v.begin(), v.end());
        double mean = 0.0;
        for (double val : v) mean += val;
        mean /= static_cast<double>(v.size());
        auto quant = [&](double q) {
          const double pos = q * static_cast<double>(v.size() - 1);
          const std::size_t k0 = static_cast<std::size_t>(pos);
          const std::size_t k1 = std::min(k0 + 1, v.size() - 1);
          return v[k0] + (pos - static_cast<double>(k0)) * (v[k1] - v[k0]);
        };
        f << (i + 1) << "," << (t + 1) << "," << (ell + 1) << "," << mean << "," << quant(lo_q)
          << "," << quant(hi_q) << "\n";
      }
  require(f.good(), "write failed for '" + path + "'");
}

// Long-format `i,j,value` dump of a square matrix, for heatmaps.
inline void export_matrix_long(const std::string& path, const Eigen::MatrixXd& m,
                               const std::string& value_name = "corr") {
  std::ofstream f(path);
  require(f.good(), "cannot write '" + path + "'");
  f << "i,j," << value_name << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      f << (i + 1) << "," << (j + 1) << "," << m(i, j) << "\n";
  require(f.good(), "write failed for '" + path + "'");
}

}  // namespace dlsm
