#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlsm/augmentation.hpp"
#include "dlsm/config.hpp"
#include "dlsm/dimension.hpp"
#include "dlsm/latent_sampler.hpp"
#include "dlsm/model.hpp"
#include "dlsm/network_data.hpp"
#include "dlsm/param_updates.hpp"

namespace dlsm {

// Everything retained from one chain. Under a random dimension the active
// shapes vary across draws; readers key per-draw shapes on `d`.
struct ChainOutput {
  std::string config_text;
  std::string config_hash;
  std::uint64_t seed = 0;
  int chain_index = 0;
  int N = 0, L = 0, T = 0;
  long n_kept = 0;
  long n_kept_x = 0;
  double wall_seconds = 0.0;
  bool truncated = false;
  long truncated_at = -1;  // 1-based iteration of the failed block
  std::string fail_block;
  std::string fail_message;

  std::vector<int> d;                // active dimension per retained draw
  Eigen::MatrixXd alpha;             // n_kept x N
  Eigen::MatrixXd beta;              // n_kept x (N L), node index fastest
  std::vector<Eigen::MatrixXd> phi;  // active transition per retained draw
  std::vector<Eigen::MatrixXd> cov;  // active innovation covariance / precision
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> w;  // n_kept x (T m), dyad fastest
  std::vector<LatentState> x;        // every x_thin-th retained draw when store_x
};

// Weakly dispersed start near the prior center: small random effects and
// trajectories (an exactly zero state is a fixed point of the smoothing
// scans, so every latent coordinate gets jitter), indicators seeded from the
// data, and one interarrival refresh so the first sweep sees a complete
// augmentation.
inline void initialize(Rng& rng, const NetworkSeries& data, const ModelConfig& cfg,
                       GlobalParams& par, LatentState& st, AugmentedState& aug,
                       MixtureTables& tables) {
  const int n = data.N;
  const PriorConfig& pr = cfg.prior;
  const int d0 = cfg.dimension_mode == DimensionMode::Random ? std::min(cfg.d, cfg.d_max) : cfg.d;

  st = LatentState::zeros(n, d0, data.T);
  for (int i = 0; i < n; ++i)
    for (int ell = 0; ell < d0; ++ell) {
      st.x0(i, ell) = pr.x0_mean + 0.1 * std::sqrt(pr.x0_var) * rnorm(rng);
      for (int t = 0; t < data.T; ++t) st.x[static_cast<std::size_t>(t)](i, ell) = 0.1 * rnorm(rng);
    }
  if (!cfg.dynamic) st.x0.setZero();

  par.alpha.resize(n);
  for (int i = 0; i < n; ++i) par.alpha[i] = 0.1 * std::sqrt(pr.sigma_alpha2) * rnorm(rng);
  par.beta.resize(n, data.L);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < data.L; ++l) par.beta(i, l) = 0.1 * std::sqrt(pr.sigma_beta2) * rnorm(rng);

  const int p = cfg.parametrization == Parametrization::NodeWise ? d0 : n;
  par.phi = Eigen::MatrixXd::Zero(p, p);
  if (cfg.dynamic)
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) {
        if (cfg.phi == PhiStructure::Diagonal && a != b) continue;
        par.phi(a, b) = 0.1 * (pr.phi_mean + std::sqrt(pr.phi_var) * rnorm(rng));
      }
  par.cov = Eigen::MatrixXd::Identity(p, p);
  par.varpi = Eigen::MatrixXd::Ones(n, n);
  par.eta_varpi = Eigen::MatrixXd::Ones(n, n);
  par.rho2 = 1.0;
  par.eta_rho = 1.0;

  aug = AugmentedState::zeros(n, data.T);
  if (cfg.zero_inflated) {
    const auto dyads = dyad_list(n);
    for (int t = 0; t < data.T; ++t)
      for (int k = 0; k < static_cast<int>(dyads.size()); ++k) {
        const int w = data.counts(k, t) > 0 ? 1 : rbernoulli(rng, 0.5);
        const auto [i, j] = dyads[static_cast<std::size_t>(k)];
        aug.w(k, t) = w;
        aug.z(k, t) = sample_utility(rng, w, utility_mean(par, data, t, i, j));
      }
  }
  refresh_interarrivals(rng, data, par, st, tables, aug);
}

// One full node scan of exact trajectory draws, ascending or shuffled.
inline void sample_states(Rng& rng, const NetworkSeries& data, const GlobalParams& par,
                          const ModelConfig& cfg, LatentState& st, const AugmentedState& aug,
                          MixtureTables& tables) {
  const int n = st.N();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (cfg.random_scan)
    for (int i = n - 1; i > 0; --i) {
      const int j = std::min(static_cast<int>(runif(rng) * (i + 1)), i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  if (cfg.parametrization == Parametrization::NodeWise) {
    const Eigen::MatrixXd omega0 =
        (1.0 / cfg.prior.x0_var) * Eigen::MatrixXd::Identity(st.d, st.d);
    for (int i : order) {
      TrajectorySystem sys =
          prior_precision_nodewise(par.phi, par.cov, st.x0.row(i).transpose(), omega0, st.T());
      sys.rows = assemble_likelihood(i, data, par, st, aug, tables);
      sys.prepare();
      scatter_trajectory(sample_trajectory(rng, sys), i, st);
    }
  } else {
    const FeatureWiseCache cache = featurewise_cache(par.phi, par.cov, st.x0, st.T());
    for (int i : order) {
      TrajectorySystem sys = prior_conditional_featurewise(cache, st, i);
      sys.rows = assemble_likelihood(i, data, par, st, aug, tables);
      sys.prepare();
      scatter_trajectory(sample_trajectory(rng, sys), i, st);
    }
  }
}

namespace detail {

// Candidate dynamics for the dimension ledger: same recipe as initialize so
// a fresh candidate looks like a fresh chain at that dimension.
inline void seed_candidates(Rng& rng, const ModelConfig& cfg, const GlobalParams& par,
                            const LatentState& st, DimensionLedger& ledger) {
  const PriorConfig& pr = cfg.prior;
  for (int dd = 1; dd <= static_cast<int>(ledger.cand.size()); ++dd) {
    auto& c = ledger.at(dd);
    for (int i = 0; i < c.state.N(); ++i)
      for (int ell = 0; ell < dd; ++ell) {
        c.state.x0(i, ell) =
            cfg.dynamic ? pr.x0_mean + 0.1 * std::sqrt(pr.x0_var) * rnorm(rng) : 0.0;
        for (int t = 0; t < c.state.T(); ++t)
          c.state.x[static_cast<std::size_t>(t)](i, ell) = 0.1 * rnorm(rng);
      }
    if (cfg.parametrization == Parametrization::FeatureWise) {
      c.phi = par.phi;
      c.cov = par.cov;
      continue;
    }
    c.phi = Eigen::MatrixXd::Zero(dd, dd);
    if (cfg.dynamic)
      for (int a = 0; a < dd; ++a)
        for (int b = 0; b < dd; ++b) {
          if (cfg.phi == PhiStructure::Diagonal && a != b) continue;
          c.phi(a, b) = 0.1 * (pr.phi_mean + std::sqrt(pr.phi_var) * rnorm(rng));
        }
    c.cov = Eigen::MatrixXd::Identity(dd, dd);
  }
  auto& act = ledger.at(ledger.active);
  act.phi = par.phi;
  act.cov = par.cov;
  act.state = st;
}

}  // namespace detail

// Single-chain PCG sweep. Blocks run in a fixed order; the dimension draw,
// when enabled, precedes the state draw, and the adopted trajectory is
// rebuilt from the accepted candidate's smoothed mode rather than reused
// across dimensions. A failing block stops the chain; draws retained so far
// are returned with the truncation marker set. `first_sweep_blocks`, when
// given, receives the names of the blocks executed in iteration 1.
inline ChainOutput run_chain(const NetworkSeries& data, const ModelConfig& cfg_in,
                             int chain_index = 0,
                             std::vector<std::string>* first_sweep_blocks = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  cfg_in.validate();
  require(!cfg_in.dynamic || data.T >= 2, "run_chain: dynamic model needs T >= 2");
  require(chain_index >= 0, "run_chain: chain index must be nonnegative");

  ModelConfig cfg = cfg_in;
  if (!cfg.dynamic) {
    // Frozen dynamics: the transition group is exactly the standard-normal
    // slice prior, there is no initial state to integrate, and inactive
    // candidates have nothing to refresh.
    cfg.penalty = LaplacePenalty::StatesOnly;
    cfg.inactive = InactivePolicy::Carry;
  }

  ChainOutput out;
  out.config_text = cfg_in.serialize();
  out.config_hash = cfg_in.hash();
  out.seed = cfg.seed;
  out.chain_index = chain_index;
  out.N = data.N;
  out.L = data.L;
  out.T = data.T;

  Rng rng(cfg.seed, static_cast<std::uint64_t>(chain_index));
  MixtureTables& tables = shared_tables();
  GlobalParams par;
  LatentState st;
  AugmentedState aug;
  initialize(rng, data, cfg, par, st, aug, tables);

  const bool random_d = cfg.dimension_mode == DimensionMode::Random;
  DimensionLedger ledger;
  std::vector<double> d_log_prior;
  if (random_d) {
    ledger = init_dimension_ledger(cfg, data.N, data.T);
    d_log_prior = log_dimension_prior(cfg);
    detail::seed_candidates(rng, cfg, par, st, ledger);
  }

  const long n_target = (cfg.n_iter - cfg.burn_in) / cfg.thin;
  const int m = n_dyads(data.N);
  out.d.assign(static_cast<std::size_t>(n_target), 0);
  out.alpha.setZero(n_target, data.N);
  out.beta.setZero(n_target, static_cast<long>(data.N) * data.L);
  out.phi.reserve(static_cast<std::size_t>(n_target));
  out.cov.reserve(static_cast<std::size_t>(n_target));
  if (cfg.zero_inflated) out.w.setZero(n_target, static_cast<long>(m) * data.T);

  long kept = 0, kept_x = 0;
  long h = 1;
  std::string block = "initialize";
  try {
    for (; h <= cfg.n_iter; ++h) {
      const bool tracing = first_sweep_blocks != nullptr && h == 1;
      auto mark = [&](const char* name) {
        block = name;
        if (tracing) first_sweep_blocks->emplace_back(name);
      };

      if (random_d) {
        mark("dimension");
        auto& act = ledger.at(ledger.active);
        act.phi = par.phi;
        act.cov = par.cov;
        act.state = st;
        if (cfg.parametrization == Parametrization::FeatureWise)
          for (auto& c : ledger.cand) {
            c.phi = par.phi;
            c.cov = par.cov;
          }
        evaluate_candidates(data, par, cfg, ledger, aug, tables);
        const int dstar = sample_dimension(rng, ledger.log_marginal, d_log_prior);
        par.phi = ledger.at(dstar).phi;
        par.cov = ledger.at(dstar).cov;
        st = ledger.at(dstar).state;
        ledger.active = dstar;
      }

      mark("x");
      sample_states(rng, data, par, cfg, st, aug, tables);
      if (cfg.dynamic) {
        mark("x0");
        sample_initial_state(rng, par, cfg, st);
      }
      if (random_d) ledger.at(ledger.active).state = st;

      mark("alpha");
      par.alpha = sample_alpha(rng, data, st, aug, tables, cfg.prior);

      if (cfg.dynamic) {
        mark("phi");
        par.phi = cfg.parametrization == Parametrization::NodeWise
                      ? sample_phi(rng, st, par.cov, cfg.prior, cfg.phi)
                      : sample_phi_tilde(rng, st, par.cov, cfg.prior, cfg.phi);
        mark("upsilon");
        if (cfg.parametrization == Parametrization::NodeWise)
          par.cov = sample_upsilon(rng, st, par.phi, cfg.prior, cfg.upsilon);
        else if (cfg.upsilon == UpsilonStructure::GraphicalHorseshoe)
          sample_omega_horseshoe(rng, st, par.phi, par, cfg.ghs_main_text_exponent);
        else
          par.cov = sample_omega_featurewise(rng, st, par.phi, cfg.prior, cfg.upsilon);
        if (random_d) {
          auto& act = ledger.at(ledger.active);
          act.phi = par.phi;
          act.cov = par.cov;
          refresh_inactive(rng, cfg, ledger);
        }
      }

      mark("tau_r");
      refresh_interarrivals(rng, data, par, st, tables, aug);

      if (cfg.zero_inflated) {
        mark("w_z");
        refresh_zero_inflation(rng, data, par, st, cfg.prior, tables, aug);
        mark("beta");
        sample_beta(rng, data, par, aug, cfg.prior);
      }

      if (h > cfg.burn_in && (h - cfg.burn_in) % cfg.thin == 0) {
        block = "record";
        out.d[static_cast<std::size_t>(kept)] = st.d;
        out.alpha.row(kept) = par.alpha.transpose();
        for (int l = 0; l < data.L; ++l)
          out.beta.row(kept).segment(static_cast<long>(l) * data.N, data.N) =
              par.beta.col(l).transpose();
        out.phi.push_back(par.phi);
        out.cov.push_back(par.cov);
        if (cfg.zero_inflated)
          for (int t = 0; t < data.T; ++t)
            for (int k = 0; k < m; ++k)
              out.w(kept, static_cast<long>(t) * m + k) = static_cast<std::int8_t>(aug.w(k, t));
        if (cfg.store_x && kept % cfg.x_thin == 0) {
          out.x.push_back(st);
          ++kept_x;
        }
        ++kept;
      }
      if (cfg.progress_every > 0 && h % cfg.progress_every == 0)
        std::fprintf(stderr, "chain %d: %ld/%ld\n", chain_index, h, cfg.n_iter);
    }
  } catch (const std::exception& e) {
    out.truncated = true;
    out.truncated_at = h;
    out.fail_block = block;
    out.fail_message = e.what();
  }

  out.n_kept = kept;
  out.n_kept_x = kept_x;
  out.d.resize(static_cast<std::size_t>(kept));
  out.alpha.conservativeResize(kept, Eigen::NoChange);
  out.beta.conservativeResize(kept, Eigen::NoChange);
  if (out.w.size() > 0) out.w.conservativeResize(kept, Eigen::NoChange);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// Independent chains over a shared config: chain c draws from RNG stream c of
// the configured seed. The optional trace observes chain 0 only.
inline std::vector<ChainOutput> run_chains(const NetworkSeries& data, const ModelConfig& cfg,
                                           int n_chains,
                                           std::vector<std::string>* first_sweep_blocks = nullptr) {
  require(n_chains >= 1, "run_chains: need at least one chain");
  std::vector<ChainOutput> outs;
  outs.reserve(static_cast<std::size_t>(n_chains));
  for (int c = 0; c < n_chains; ++c)
    outs.push_back(run_chain(data, cfg, c, c == 0 ? first_sweep_blocks : nullptr));
  return outs;
}

namespace detail {

inline void write_f64(const std::string& path, const std::vector<double>& buf) {
  static_assert(sizeof(double) == 8, "parameter files are 8-byte floats");
  const std::uint16_t probe = 1;
  require(*reinterpret_cast<const std::uint8_t*>(&probe) == 1,
          "chain persistence assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
  require(out.good(), "write failed for '" + path + "'");
}

}  // namespace detail

inline std::vector<double> read_f64(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(in.good(), "cannot open '" + path + "'");
  const std::streamsize bytes = in.tellg();
  require(bytes % 8 == 0, "'" + path + "': size is not a multiple of 8");
  std::vector<double> buf(static_cast<std::size_t>(bytes / 8));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), bytes);
  require(in.good(), "read failed for '" + path + "'");
  return buf;
}

// Output directory layout: manifest.txt (flat key-value; one `array.<name>`
// line per group giving file name then dimensions, last dimension fastest),
// config.txt (canonical config echo), and one raw little-endian float64 file
// per group. Ragged groups (phi/cov/x under a random dimension) are padded
// with NaN up to the largest retained dimension.
inline void write_chain(const std::string& dir, const ChainOutput& out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const double pad = std::numeric_limits<double>::quiet_NaN();
  const long K = out.n_kept;

  std::ostringstream mf;
  mf.precision(17);
  mf << "format = dlsm-chain-1\n";
  mf << "config_hash = " << out.config_hash << "\n";
  mf << "config_file = config.txt\n";
  mf << "seed = " << out.seed << "\n";
  mf << "chain_index = " << out.chain_index << "\n";
  mf << "n_nodes = " << out.N << "\n";
  mf << "n_covariates = " << out.L << "\n";
  mf << "n_times = " << out.T << "\n";
  mf << "n_kept = " << out.n_kept << "\n";
  mf << "n_kept_x = " << out.n_kept_x << "\n";
  mf << "wall_seconds = " << out.wall_seconds << "\n";
  mf << "truncated = " << (out.truncated ? "true" : "false") << "\n";
  if (out.truncated) {
    mf << "truncated_at = " << out.truncated_at << "\n";
    mf << "fail_block = " << out.fail_block << "\n";
    mf << "fail_message = " << out.fail_message << "\n";
  }

  {
    std::vector<double> buf(static_cast<std::size_t>(K));
    for (long k = 0; k < K; ++k) buf[static_cast<std::size_t>(k)] = out.d[static_cast<std::size_t>(k)];
    detail::write_f64(dir + "/d.f64", buf);
    mf << "array.d = d.f64 " << K << "\n";
  }
  {
    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(K * out.N));
    for (long k = 0; k < K; ++k)
      for (int i = 0; i < out.N; ++i) buf.push_back(out.alpha(k, i));
    detail::write_f64(dir + "/alpha.f64", buf);
    mf << "array.alpha = alpha.f64 " << K << " " << out.N << "\n";
  }
  {
    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(K * out.beta.cols()));
    for (long k = 0; k < K; ++k)
      for (long c = 0; c < out.beta.cols(); ++c) buf.push_back(out.beta(k, c));
    detail::write_f64(dir + "/beta.f64", buf);
    mf << "array.beta = beta.f64 " << K << " " << out.L << " " << out.N << "\n";
  }
  {
    long p = 0;
    for (const auto& mat : out.phi) p = std::max(p, static_cast<long>(mat.rows()));
    std::vector<double> bphi, bcov;
    bphi.reserve(static_cast<std::size_t>(K * p * p));
    bcov.reserve(static_cast<std::size_t>(K * p * p));
    for (long k = 0; k < K; ++k) {
      const auto& ph = out.phi[static_cast<std::size_t>(k)];
      const auto& cv = out.cov[static_cast<std::size_t>(k)];
      for (long a = 0; a < p; ++a)
        for (long b = 0; b < p; ++b) {
          bphi.push_back(a < ph.rows() && b < ph.cols() ? ph(a, b) : pad);
          bcov.push_back(a < cv.rows() && b < cv.cols() ? cv(a, b) : pad);
        }
    }
    detail::write_f64(dir + "/phi.f64", bphi);
    detail::write_f64(dir + "/cov.f64", bcov);
    mf << "array.phi = phi.f64 " << K << " " << p << " " << p << "\n";
    mf << "array.cov = cov.f64 " << K << " " << p << " " << p << "\n";
  }
  if (out.w.size() > 0) {
    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(out.w.rows() * out.w.cols()));
    for (long k = 0; k < out.w.rows(); ++k)
      for (long c = 0; c < out.w.cols(); ++c) buf.push_back(out.w(k, c));
    detail::write_f64(dir + "/w.f64", buf);
    mf << "array.w = w.f64 " << K << " " << out.T << " " << n_dyads(out.N) << "\n";
  }
  if (!out.x.empty()) {
    long dx = 0;
    for (const auto& stk : out.x) dx = std::max(dx, static_cast<long>(stk.d));
    std::vector<double> bx, bx0;
    for (const auto& stk : out.x) {
      for (int t = 0; t < stk.T(); ++t)
        for (int i = 0; i < stk.N(); ++i)
          for (long ell = 0; ell < dx; ++ell)
            bx.push_back(ell < stk.d ? stk.x[static_cast<std::size_t>(t)](i, ell) : pad);
      for (int i = 0; i < stk.N(); ++i)
        for (long ell = 0; ell < dx; ++ell)
          bx0.push_back(ell < stk.d ? stk.x0(i, ell) : pad);
    }
    detail::write_f64(dir + "/x.f64", bx);
    detail::write_f64(dir + "/x0.f64", bx0);
    mf << "array.x = x.f64 " << out.n_kept_x << " " << out.T << " " << out.N << " " << dx << "\n";
    mf << "array.x0 = x0.f64 " << out.n_kept_x << " " << out.N << " " << dx << "\n";
  }

  {
    std::ofstream cf(dir + "/config.txt");
    require(cf.good(), "cannot write '" + dir + "/config.txt'");
    cf << out.config_text;
    require(cf.good(), "write failed for '" + dir + "/config.txt'");
  }
  std::ofstream mfile(dir + "/manifest.txt");
  require(mfile.good(), "cannot write '" + dir + "/manifest.txt'");
  mfile << mf.str();
  require(mfile.good(), "write failed for '" + dir + "/manifest.txt'");
}

inline KeyValueFile read_manifest(const std::string& dir) {
  return KeyValueFile::load(dir + "/manifest.txt");
}

// Scalar groups as delimited text, one retained draw per row.
inline void export_draws_csv(const std::string& path, const ChainOutput& out) {
  std::ofstream f(path);
  require(f.good(), "cannot write '" + path + "'");
  f.precision(17);
  f << "draw,d";
  for (int i = 0; i < out.N; ++i) f << ",alpha_" << (i + 1);
  for (int l = 0; l < out.L; ++l)
    for (int i = 0; i < out.N; ++i) f << ",beta_" << (i + 1) << "_" << (l + 1);
  f << "\n";
  for (long k = 0; k < out.n_kept; ++k) {
    f << (k + 1) << "," << out.d[static_cast<std::size_t>(k)];
    for (int i = 0; i < out.N; ++i) f << "," << out.alpha(k, i);
    for (long c = 0; c < out.beta.cols(); ++c) f << "," << out.beta(k, c);
    f << "\n";
  }
  require(f.good(), "write failed for '" + path + "'");
}

}  // namespace dlsm
