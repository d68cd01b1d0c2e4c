#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "dlsm/diagnostics.hpp"
#include "dlsm/gibbs.hpp"

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir(const char* tag) {
    path = std::filesystem::temp_directory_path() /
           (std::string("dlsm_diag_") + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::vector<double> white_noise(dlsm::Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = dlsm::rnorm(rng);
  return x;
}

std::vector<double> ar1(dlsm::Rng& rng, std::size_t n, double rho) {
  std::vector<double> x(n);
  x[0] = dlsm::rnorm(rng) / std::sqrt(1.0 - rho * rho);
  for (std::size_t t = 1; t < n; ++t) x[t] = rho * x[t - 1] + dlsm::rnorm(rng);
  return x;
}

dlsm::NetworkSeries static_counts(int n, unsigned long seed, Eigen::VectorXd* alpha_out = nullptr,
                                  Eigen::MatrixXd* x_out = nullptr) {
  dlsm::Rng rng(seed, 0);
  Eigen::VectorXd alpha(n);
  for (int i = 0; i < n; ++i) alpha[i] = -0.2 + 0.8 * dlsm::runif(rng);
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < 2; ++l) x(i, l) = 0.5 * dlsm::rnorm(rng);
  auto data = dlsm::NetworkSeries::zeros(n, 1);
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < j; ++i) {
      const double eta = alpha[i] + alpha[j] + x.row(i).dot(x.row(j));
      data.counts(dlsm::dyad_index(n, i, j), 0) = static_cast<int>(dlsm::rpois(rng, std::exp(eta)));
    }
  if (alpha_out) *alpha_out = alpha;
  if (x_out) *x_out = x;
  return data;
}

double series_se(const std::vector<double>& s) {
  double m = 0.0;
  for (double v : s) m += v;
  m /= static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s) var += (v - m) * (v - m);
  var /= static_cast<double>(s.size() - 1);
  return std::sqrt(var / dlsm::effective_sample_size(s).ess);
}

double series_mean(const std::vector<double>& s) {
  double m = 0.0;
  for (double v : s) m += v;
  return m / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("effective sample size matches iid and autocorrelated references", "[diagnostics]") {
  dlsm::Rng rng(4242, 0);

  SECTION("iid draws give ESS close to n") {
    const auto x = white_noise(rng, 10000);
    const auto r = dlsm::effective_sample_size(x);
    CHECK_FALSE(r.constant_chain);
    CHECK(r.ess / 10000.0 > 0.8);
    CHECK(r.ess / 10000.0 < 1.2);
  }

  SECTION("AR(1) with rho 0.5 gives ESS near n/3") {
    const auto x = ar1(rng, 100000, 0.5);
    const auto r = dlsm::effective_sample_size(x);
    CHECK(std::fabs(r.ess / 100000.0 - 1.0 / 3.0) < 0.05);
  }

  SECTION("constant chain reports n with a flag") {
    const std::vector<double> x(100, 3.7);
    const auto r = dlsm::effective_sample_size(x);
    CHECK(r.constant_chain);
    CHECK(r.ess == 100.0);
  }

  SECTION("ESS is invariant under affine maps") {
    const auto x = ar1(rng, 5000, 0.3);
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) y[t] = -2.5 * x[t] + 7.0;
    const double a = dlsm::effective_sample_size(x).ess;
    const double b = dlsm::effective_sample_size(y).ess;
    CHECK(std::fabs(a - b) < 1e-6 * a);
  }

  SECTION("antithetic chains are capped at ten times n") {
    std::vector<double> x(2000);
    for (std::size_t t = 0; t < x.size(); ++t)
      x[t] = (t % 2 == 0 ? 1.0 : -1.0) + 0.01 * dlsm::rnorm(rng);
    const auto r = dlsm::effective_sample_size(x);
    CHECK(r.ess > 2000.0);
    CHECK(r.ess <= 10.0 * 2000.0 + 1e-9);
  }

  SECTION("too few draws are rejected") {
    CHECK_THROWS_WITH(dlsm::effective_sample_size(std::vector<double>(5, 0.0)),
                      Catch::Matchers::ContainsSubstring("at least 10"));
  }
}

TEST_CASE("geweke score is calibrated on white noise and detects mean shifts", "[diagnostics]") {
  SECTION("white noise p-values average near one half") {
    double p_sum = 0.0;
    for (unsigned long rep = 0; rep < 100; ++rep) {
      dlsm::Rng rng(900 + rep, 0);
      const auto x = white_noise(rng, 2000);
      const auto g = dlsm::geweke_cd(x);
      REQUIRE_FALSE(g.degenerate);
      p_sum += g.p;
    }
    const double p_mean = p_sum / 100.0;
    CHECK(p_mean > 0.4);
    CHECK(p_mean < 0.6);
  }

  SECTION("a five standard deviation shift in the late half is flagged hard") {
    dlsm::Rng rng(77, 0);
    auto x = white_noise(rng, 2000);
    for (std::size_t t = 1000; t < 2000; ++t) x[t] += 5.0;
    const auto g = dlsm::geweke_cd(x);
    CHECK(std::fabs(g.z) > 10.0);
    CHECK(g.p < 1e-10);
  }

  SECTION("time reversal flips the sign on a trending chain") {
    std::vector<double> x(1000);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = static_cast<double>(t) / 1000.0;
    std::vector<double> rev(x.rbegin(), x.rend());
    const auto fwd = dlsm::geweke_cd(x);
    const auto bwd = dlsm::geweke_cd(rev);
    CHECK(fwd.z < 0.0);
    CHECK(bwd.z > 0.0);
  }

  SECTION("zero-variance windows are flagged, not divided by") {
    const std::vector<double> x(500, 1.0);
    const auto g = dlsm::geweke_cd(x);
    CHECK(g.degenerate);
    CHECK(g.p == 1.0);
  }

  SECTION("invalid windows are rejected") {
    dlsm::Rng rng(3, 0);
    const auto x = white_noise(rng, 500);
    CHECK_THROWS_WITH(dlsm::geweke_cd(x, 0.6, 0.6),
                      Catch::Matchers::ContainsSubstring("non-overlapping"));
    CHECK_THROWS_WITH(dlsm::geweke_cd(std::vector<double>(30, 0.0)),
                      Catch::Matchers::ContainsSubstring("too short"));
  }
}

TEST_CASE("procrustes alignment recovers rotations and flags degeneracy", "[diagnostics]") {
  dlsm::Rng rng(515, 0);
  Eigen::MatrixXd a(20, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = dlsm::rnorm(rng);

  SECTION("a known orthogonal map is recovered") {
    Eigen::MatrixXd seed(3, 3);
    for (Eigen::Index i = 0; i < seed.size(); ++i) seed(i) = dlsm::rnorm(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(seed);
    const Eigen::MatrixXd o = qr.householderQ();
    const Eigen::MatrixXd b = a * o;
    const auto rot = dlsm::procrustes_rotation(a, b);
    CHECK_FALSE(rot.degenerate);
    CHECK((rot.rotation - o).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((dlsm::procrustes_align(a, b) - b).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("alignment preserves inner products") {
    Eigen::MatrixXd b = a;
    b.col(0).swap(b.col(1));
    const Eigen::MatrixXd aligned = dlsm::procrustes_align(a, b);
    const Eigen::MatrixXd before = a * a.transpose();
    const Eigen::MatrixXd after = aligned * aligned.transpose();
    CHECK((before - after).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("aligning a configuration with itself is the identity") {
    const auto rot = dlsm::procrustes_rotation(a, a);
    CHECK_FALSE(rot.degenerate);
    CHECK((rot.rotation - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("a rank-deficient cross-product falls back to the identity") {
    const Eigen::MatrixXd b = Eigen::MatrixXd::Zero(20, 3);
    const auto rot = dlsm::procrustes_rotation(a, b);
    CHECK(rot.degenerate);
    CHECK(rot.rotation == Eigen::MatrixXd::Identity(3, 3));
  }

  SECTION("rmse of identical matrices is zero") {
    CHECK(dlsm::matrix_rmse(a, a) == 0.0);
    Eigen::MatrixXd shifted = a;
    shifted.array() += 2.0;
    CHECK(std::fabs(dlsm::matrix_rmse(a, shifted) - 2.0) < 1e-12);
  }
}

TEST_CASE("circular projection splits directions and magnitudes", "[diagnostics]") {
  dlsm::Rng rng(62, 0);
  Eigen::MatrixXd x(8, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = dlsm::rnorm(rng);
  x.row(5).setZero();

  const auto proj = dlsm::circular_projection(x);
  REQUIRE(proj.direction.rows() == 8);
  for (int i = 0; i < 8; ++i) {
    if (i == 5) {
      CHECK(proj.undefined[5]);
      CHECK(proj.magnitude[5] == 0.0);
      CHECK(proj.direction.row(5).norm() == 0.0);
      continue;
    }
    CHECK_FALSE(proj.undefined[static_cast<std::size_t>(i)]);
    CHECK(std::fabs(proj.direction.row(i).norm() - 1.0) < 1e-12);
    CHECK((proj.direction.row(i) * proj.magnitude[i] - x.row(i)).norm() < 1e-12);
  }

  SECTION("angles agree with the polarization identity") {
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) {
        const double dot = x.row(i).dot(x.row(j));
        const double polar = 0.5 * (x.row(i).squaredNorm() + x.row(j).squaredNorm() -
                                    (x.row(i) - x.row(j)).squaredNorm());
        CHECK(std::fabs(dot - polar) < 1e-10);
        const double cos_ij = proj.direction.row(i).dot(proj.direction.row(j));
        CHECK(std::fabs(cos_ij - dot / (proj.magnitude[i] * proj.magnitude[j])) < 1e-12);
      }
  }
}

TEST_CASE("structural zero map averages indicator draws with forced zeros", "[diagnostics]") {
  auto data = dlsm::NetworkSeries::zeros(3, 2);
  data.counts(1, 0) = 4;  // dyad (0,2) observed active at t = 0

  dlsm::ChainOutput chain;
  chain.N = 3;
  chain.T = 2;
  chain.n_kept = 3;
  chain.alpha.setZero(3, 3);
  chain.w.resize(3, 6);  // layout: t * m + k
  chain.w << 1, 1, 0, 0, 1, 0,
             0, 1, 1, 0, 0, 0,
             1, 1, 0, 1, 1, 1;

  const auto prob = dlsm::structural_zero_map(chain, data);
  REQUIRE(prob.rows() == 3);
  REQUIRE(prob.cols() == 2);
  CHECK(std::fabs(prob(0, 0) - 1.0 / 3.0) < 1e-15);
  CHECK(prob(1, 0) == 0.0);  // positive count forces zero
  CHECK(std::fabs(prob(2, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::fabs(prob(0, 1) - 2.0 / 3.0) < 1e-15);
  CHECK(std::fabs(prob(1, 1) - 1.0 / 3.0) < 1e-15);
  CHECK(std::fabs(prob(2, 1) - 2.0 / 3.0) < 1e-15);

  dlsm::ChainOutput no_w;
  no_w.N = 3;
  no_w.T = 2;
  no_w.n_kept = 3;
  CHECK_THROWS_WITH(dlsm::structural_zero_map(no_w, data),
                    Catch::Matchers::ContainsSubstring("no retained w draws"));
}

TEST_CASE("metropolis baseline agrees with the augmentation sampler on a static instance",
          "[diagnostics][slow]") {
  const auto data = static_counts(10, 2026);

  dlsm::ModelConfig cfg;
  cfg.zero_inflated = false;
  cfg.dynamic = false;
  cfg.d = 2;
  cfg.n_iter = 4000;
  cfg.burn_in = 1000;
  cfg.seed = 11;
  cfg.progress_every = 0;
  const auto gibbs = dlsm::run_chain(data, cfg);
  REQUIRE_FALSE(gibbs.truncated);

  dlsm::ModelConfig mh_cfg = cfg;
  mh_cfg.n_iter = 24000;
  mh_cfg.burn_in = 6000;
  mh_cfg.seed = 12;
  const auto mh = dlsm::baseline_static_mh(data, 2, mh_cfg);
  REQUIRE(mh.n_kept == 18000);
  REQUIRE(mh.n_kept_x == 18000);

  auto log_intensity_series = [&](const dlsm::ChainOutput& chain) {
    std::vector<double> s(static_cast<std::size_t>(chain.n_kept_x));
    for (long h = 0; h < chain.n_kept_x; ++h) {
      const auto& xt = chain.x[static_cast<std::size_t>(h)].x[0];
      double total = 0.0;
      for (int j = 1; j < 10; ++j)
        for (int i = 0; i < j; ++i)
          total += chain.alpha(h, i) + chain.alpha(h, j) + xt.row(i).dot(xt.row(j));
      s[static_cast<std::size_t>(h)] = total / dlsm::n_dyads(10);
    }
    return s;
  };

  SECTION("posterior means of identified functionals match within combined error") {
    for (int i = 0; i < 10; ++i) {
      const auto a = dlsm::alpha_series(gibbs, i);
      const auto b = dlsm::alpha_series(mh, i);
      const double se = std::sqrt(series_se(a) * series_se(a) + series_se(b) * series_se(b));
      CHECK(std::fabs(series_mean(a) - series_mean(b)) < 4.0 * se);
    }
    const auto la = log_intensity_series(gibbs);
    const auto lb = log_intensity_series(mh);
    const double se = std::sqrt(series_se(la) * series_se(la) + series_se(lb) * series_se(lb));
    CHECK(std::fabs(series_mean(la) - series_mean(lb)) < 3.0 * se);
  }

  SECTION("the block sampler mixes faster on the latent coordinates") {
    double gibbs_pct = 0.0, mh_pct = 0.0;
    int count = 0;
    for (int i = 0; i < 10; ++i)
      for (int ell = 0; ell < 2; ++ell) {
        const auto a = dlsm::latent_series(gibbs, 0, i, ell);
        const auto b = dlsm::latent_series(mh, 0, i, ell);
        gibbs_pct += dlsm::effective_sample_size(a).ess / static_cast<double>(a.size());
        mh_pct += dlsm::effective_sample_size(b).ess / static_cast<double>(b.size());
        ++count;
      }
    gibbs_pct /= count;
    mh_pct /= count;
    CAPTURE(gibbs_pct, mh_pct);
    CHECK(gibbs_pct > mh_pct);
  }
}

TEST_CASE("series extraction and plot exports", "[diagnostics]") {
  dlsm::ChainOutput chain;
  chain.N = 2;
  chain.T = 2;
  chain.n_kept = 3;
  chain.n_kept_x = 3;
  chain.alpha.resize(3, 2);
  chain.alpha << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  for (int h = 0; h < 3; ++h) {
    auto st = dlsm::LatentState::zeros(2, 1, 2);
    st.x[0](0, 0) = 1.0 + h;
    st.x[0](1, 0) = -1.0;
    st.x[1](0, 0) = 0.5;
    st.x[1](1, 0) = 2.0 * h;
    chain.x.push_back(st);
  }

  SECTION("series helpers pull the right coordinates") {
    const auto a = dlsm::alpha_series(chain, 1);
    REQUIRE(a == std::vector<double>{2.0, 4.0, 6.0});
    const auto x = dlsm::latent_series(chain, 1, 1, 0);
    REQUIRE(x == std::vector<double>{0.0, 2.0, 4.0});
    CHECK_THROWS(dlsm::alpha_series(chain, 2));
  }

  SECTION("trajectory bands cover the draws in long format") {
    TempDir dir("bands");
    std::filesystem::create_directories(dir.path);
    const std::string path = (dir.path / "bands.csv").string();
    dlsm::export_trajectory_bands(path, chain, 0.0, 1.0);

    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "node,t,dim,mean,lo,hi");
    int rows = 0;
    std::string line;
    double mean14 = 0.0, lo14 = 0.0, hi14 = 0.0;
    while (std::getline(f, line)) {
      ++rows;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      int node, t, dim;
      double mean, lo, hi;
      ss >> node >> t >> dim >> mean >> lo >> hi;
      CHECK(lo <= mean);
      CHECK(mean <= hi);
      if (node == 1 && t == 1) {
        mean14 = mean;
        lo14 = lo;
        hi14 = hi;
      }
    }
    CHECK(rows == 4);  // 2 nodes x 2 times x 1 dim
    // node 1, t 1 takes values 1, 2, 3 across draws (alignment in 1-d with
    // positive cross-product is the identity)
    CHECK(std::fabs(mean14 - 2.0) < 1e-12);
    CHECK(lo14 == 1.0);
    CHECK(hi14 == 3.0);
  }

  SECTION("square matrices dump as i,j,value rows") {
    TempDir dir("corr");
    std::filesystem::create_directories(dir.path);
    const std::string path = (dir.path / "corr.csv").string();
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 0.25, 0.25, 1.0;
    dlsm::export_matrix_long(path, m);

    std::ifstream f(path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(all == "i,j,corr\n1,1,1\n1,2,0.25\n2,1,0.25\n2,2,1\n");
  }
}
