#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dlsm/diagnostics.hpp"
#include "dlsm/dist.hpp"
#include "dlsm/gibbs.hpp"
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/rng.hpp"

namespace dlsm {

// Count panel generator: Poisson intensities from time-invariant node effects
// plus a feature-wise AR(1) latent space with block-equicorrelated
// innovations, and a probit layer for structural zeros.
struct SyntheticSpec {
  int n = 50;
  int d = 2;
  int t_len = 20;
  double alpha_mean = 2.0;
  double alpha_sd = 0.4;
  double beta_mean = 0.7;
  double beta_sd = 0.5;
  double ar = 0.3;
  std::vector<int> blocks = {5, 5, 5, 10, 10, 5, 10};
  double sigma2 = 0.8;
  double rho = 0.5;
  double zero_share = -1.0;  // in (0,1): overrides beta_mean to hit this marginal share
};

struct GroundTruth {
  int d = 0;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd beta;        // N x 1
  LatentState x;
  Eigen::ArrayXXi w;           // n_dyads x T
  Eigen::ArrayXXd z;           // n_dyads x T
  Eigen::ArrayXXd log_lambda;  // n_dyads x T
  Eigen::MatrixXd sigma;       // innovation covariance across nodes
};

// Block partitions at other network sizes follow the default pattern as far
// as it fits, with one remainder block.
inline std::vector<int> default_blocks(int n) {
  require(n >= 1, "default_blocks: need at least one node");
  const std::vector<int> pattern = {5, 5, 5, 10, 10, 5, 10};
  std::vector<int> out;
  int sum = 0;
  for (std::size_t k = 0; sum < n; k = (k + 1) % pattern.size()) {
    const int next = std::min(pattern[k], n - sum);
    out.push_back(next);
    sum += next;
  }
  return out;
}

// Marginal probability of a structural zero: z ~ N(beta_i + beta_j, 1) with
// independent beta draws makes the zero share Phi(-2 mean / sqrt(1 + 2 sd^2)).
inline double marginal_zero_share(double beta_mean, double beta_sd) {
  return norm_sf(2.0 * beta_mean / std::sqrt(1.0 + 2.0 * beta_sd * beta_sd));
}

inline double solve_beta_mean(double beta_sd, double target) {
  require(target > 0.0 && target < 1.0, "solve_beta_mean: target share must be in (0, 1)");
  require(beta_sd > 0.0, "solve_beta_mean: beta_sd must be positive");
  double lo = -20.0, hi = 20.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    // share is decreasing in the mean
    if (marginal_zero_share(mid, beta_sd) > target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline Eigen::MatrixXd block_covariance(const std::vector<int>& blocks, double sigma2,
                                        double rho) {
  require(!blocks.empty(), "block_covariance: empty partition");
  require(sigma2 > 0.0 && rho >= 0.0 && rho < sigma2,
          "block_covariance: need 0 <= rho < sigma2");
  int n = 0;
  for (int s : blocks) {
    require(s >= 1, "block_covariance: block sizes must be positive");
    n += s;
  }
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(n, n);
  int at = 0;
  for (int s : blocks) {
    sigma.block(at, at, s, s).setConstant(rho);
    for (int i = 0; i < s; ++i) sigma(at + i, at + i) = sigma2;
    at += s;
  }
  return sigma;
}

inline std::pair<NetworkSeries, GroundTruth> generate(const SyntheticSpec& spec,
                                                      std::uint64_t seed) {
  require(spec.d >= 1 && spec.t_len >= 1, "generate: need d >= 1 and T >= 1");
  require(spec.alpha_sd > 0.0 && spec.beta_sd > 0.0, "generate: node-effect sds must be positive");
  require(std::fabs(spec.ar) < 1.0, "generate: AR coefficient must be stationary");
  int sum = 0;
  for (int s : spec.blocks) sum += s;
  require(sum == spec.n && !spec.blocks.empty(), "generate: invalid block partition");

  Rng rng(seed);
  GroundTruth truth;
  truth.d = spec.d;
  truth.sigma = block_covariance(spec.blocks, spec.sigma2, spec.rho);
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(truth.sigma).matrixL();
  const double stat_scale = 1.0 / std::sqrt(1.0 - spec.ar * spec.ar);

  truth.alpha.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) truth.alpha[i] = spec.alpha_mean + spec.alpha_sd * rnorm(rng);
  const double beta_mean =
      spec.zero_share > 0.0 ? solve_beta_mean(spec.beta_sd, spec.zero_share) : spec.beta_mean;
  truth.beta.resize(spec.n, 1);
  for (int i = 0; i < spec.n; ++i) truth.beta(i, 0) = beta_mean + spec.beta_sd * rnorm(rng);

  truth.x = LatentState::zeros(spec.n, spec.d, spec.t_len);
  Eigen::VectorXd eps(spec.n);
  for (int ell = 0; ell < spec.d; ++ell) {
    for (int i = 0; i < spec.n; ++i) eps[i] = rnorm(rng);
    truth.x.x0.col(ell) = stat_scale * (chol * eps);  // stationary start
  }
  for (int t = 0; t < spec.t_len; ++t) {
    const Eigen::MatrixXd& lag = t == 0 ? truth.x.x0 : truth.x.x[static_cast<std::size_t>(t - 1)];
    for (int ell = 0; ell < spec.d; ++ell) {
      for (int i = 0; i < spec.n; ++i) eps[i] = rnorm(rng);
      truth.x.x[static_cast<std::size_t>(t)].col(ell) = spec.ar * lag.col(ell) + chol * eps;
    }
  }

  NetworkSeries data = NetworkSeries::zeros(spec.n, spec.t_len);
  const auto dyads = dyad_list(spec.n);
  const int m = static_cast<int>(dyads.size());
  truth.w.setZero(m, spec.t_len);
  truth.z.setZero(m, spec.t_len);
  truth.log_lambda.setZero(m, spec.t_len);
  for (int t = 0; t < spec.t_len; ++t)
    for (int k = 0; k < m; ++k) {
      const auto [i, j] = dyads[static_cast<std::size_t>(k)];
      const double z = truth.beta(i, 0) + truth.beta(j, 0) + rnorm(rng);
      const double ll =
          log_intensity(truth.alpha, truth.x.x[static_cast<std::size_t>(t)], i, j);
      truth.z(k, t) = z;
      truth.log_lambda(k, t) = ll;
      if (z > 0.0) {
        truth.w(k, t) = 1;
        data.counts(k, t) = static_cast<int>(rpois(rng, std::exp(ll)));
      }
    }
  return {std::move(data), std::move(truth)};
}

// Ground truth on disk, chain-format manifest plus a truth flag.
inline void write_truth(const std::string& dir, const GroundTruth& truth) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int n = static_cast<int>(truth.alpha.size());
  const int t_len = truth.x.T();
  const int m = static_cast<int>(truth.w.rows());

  std::ostringstream mf;
  mf.precision(17);
  mf << "format = dlsm-chain-1\n";
  mf << "truth = true\n";
  mf << "n_nodes = " << n << "\n";
  mf << "n_covariates = 1\n";
  mf << "n_times = " << t_len << "\n";
  mf << "n_kept = 1\n";
  mf << "n_kept_x = 1\n";

  detail::write_f64(dir + "/d.f64", {static_cast<double>(truth.d)});
  mf << "array.d = d.f64 1\n";
  std::vector<double> buf(truth.alpha.data(), truth.alpha.data() + n);
  detail::write_f64(dir + "/alpha.f64", buf);
  mf << "array.alpha = alpha.f64 1 " << n << "\n";
  buf.assign(truth.beta.data(), truth.beta.data() + n);
  detail::write_f64(dir + "/beta.f64", buf);
  mf << "array.beta = beta.f64 1 1 " << n << "\n";

  buf.clear();
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < n; ++i)
      for (int ell = 0; ell < truth.d; ++ell)
        buf.push_back(truth.x.x[static_cast<std::size_t>(t)](i, ell));
  detail::write_f64(dir + "/x.f64", buf);
  mf << "array.x = x.f64 1 " << t_len << " " << n << " " << truth.d << "\n";
  buf.clear();
  for (int i = 0; i < n; ++i)
    for (int ell = 0; ell < truth.d; ++ell) buf.push_back(truth.x.x0(i, ell));
  detail::write_f64(dir + "/x0.f64", buf);
  mf << "array.x0 = x0.f64 1 " << n << " " << truth.d << "\n";

  auto dump_cells = [&](const char* name, auto&& value) {
    buf.clear();
    for (int t = 0; t < t_len; ++t)
      for (int k = 0; k < m; ++k) buf.push_back(value(k, t));
    detail::write_f64(dir + "/" + name + ".f64", buf);
    mf << "array." << name << " = " << name << ".f64 1 " << t_len << " " << m << "\n";
  };
  dump_cells("w", [&](int k, int t) { return static_cast<double>(truth.w(k, t)); });
  dump_cells("z", [&](int k, int t) { return truth.z(k, t); });
  dump_cells("log_lambda", [&](int k, int t) { return truth.log_lambda(k, t); });

  buf.clear();
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) buf.push_back(truth.sigma(a, b));
  detail::write_f64(dir + "/sigma.f64", buf);
  mf << "array.sigma = sigma.f64 " << n << " " << n << "\n";

  std::ofstream mfile(dir + "/manifest.txt");
  require(mfile.good(), "cannot write '" + dir + "/manifest.txt'");
  mfile << mf.str();
  require(mfile.good(), "write failed for '" + dir + "/manifest.txt'");
}

// Recovery metrics against a known ground truth. The indicator comparison
// treats a structural zero as the positive class, predicted when the
// posterior mean of w falls below one half; cells with positive counts enter
// as forced actives.
struct TruthScore {
  double f1 = 0.0;
  double mcc = 0.0;
  double mse_alpha = 0.0;
  double mse_log_lambda = std::numeric_limits<double>::quiet_NaN();
  int d_mode = 0;
  double procrustes_rmse = std::numeric_limits<double>::quiet_NaN();
};

inline TruthScore score_against_truth(const ChainOutput& chain, const GroundTruth& truth) {
  const int n = static_cast<int>(truth.alpha.size());
  const int t_len = truth.x.T();
  const int m = n_dyads(n);
  require(chain.N == n && chain.T == t_len, "score_against_truth: shape mismatch");
  require(chain.n_kept >= 1, "score_against_truth: empty chain");
  const long kept = chain.n_kept;

  TruthScore sc;
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (int t = 0; t < t_len; ++t)
    for (int k = 0; k < m; ++k) {
      double mean_w = 1.0;
      if (chain.w.size() > 0) {
        double s = 0.0;
        for (long h = 0; h < kept; ++h) s += chain.w(h, static_cast<long>(t) * m + k);
        mean_w = s / static_cast<double>(kept);
      }
      const bool pred_zero = mean_w < 0.5;
      const bool true_zero = truth.w(k, t) == 0;
      if (pred_zero && true_zero) ++tp;
      else if (pred_zero) ++fp;
      else if (true_zero) ++fn;
      else ++tn;
    }
  sc.f1 = 2.0 * tp + fp + fn > 0.0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  sc.mcc = denom > 0.0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;

  const Eigen::VectorXd alpha_hat = chain.alpha.colwise().mean();
  sc.mse_alpha = (alpha_hat - truth.alpha).squaredNorm() / n;

  std::vector<long> freq;
  for (long h = 0; h < kept; ++h) {
    const std::size_t dd = static_cast<std::size_t>(chain.d[static_cast<std::size_t>(h)]);
    if (freq.size() < dd + 1) freq.resize(dd + 1, 0);
    ++freq[dd];
  }
  sc.d_mode = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());

  if (chain.n_kept_x >= 1) {
    KeyValueFile cfg = KeyValueFile::parse_text(chain.config_text);
    const long x_thin = cfg.get_long("mcmc.x_thin", 1);
    const auto dyads = dyad_list(n);
    Eigen::ArrayXXd ll_hat = Eigen::ArrayXXd::Zero(m, t_len);
    Eigen::MatrixXd true_stack(static_cast<long>(n) * t_len, truth.d);
    for (int t = 0; t < t_len; ++t)
      true_stack.middleRows(static_cast<long>(t) * n, n) = truth.x.x[static_cast<std::size_t>(t)];
    Eigen::MatrixXd aligned = Eigen::MatrixXd::Zero(true_stack.rows(), truth.d);
    long n_aligned = 0;
    for (long kx = 0; kx < chain.n_kept_x; ++kx) {
      const LatentState& st = chain.x[static_cast<std::size_t>(kx)];
      const long h = kx * x_thin;
      require(h < kept, "score_against_truth: latent draw index out of range");
      for (int t = 0; t < t_len; ++t)
        for (int k = 0; k < m; ++k) {
          const auto [i, j] = dyads[static_cast<std::size_t>(k)];
          ll_hat(k, t) += chain.alpha(h, i) + chain.alpha(h, j) +
                          st.x[static_cast<std::size_t>(t)].row(i).dot(
                              st.x[static_cast<std::size_t>(t)].row(j));
        }
      if (st.d == truth.d) {
        Eigen::MatrixXd stack(true_stack.rows(), truth.d);
        for (int t = 0; t < t_len; ++t)
          stack.middleRows(static_cast<long>(t) * n, n) = st.x[static_cast<std::size_t>(t)];
        aligned += procrustes_align(stack, true_stack);
        ++n_aligned;
      }
    }
    ll_hat /= static_cast<double>(chain.n_kept_x);
    sc.mse_log_lambda = (ll_hat - truth.log_lambda).square().mean();
    if (n_aligned > 0)
      sc.procrustes_rmse = matrix_rmse(aligned / static_cast<double>(n_aligned), true_stack);
  }
  return sc;
}

}  // namespace dlsm
