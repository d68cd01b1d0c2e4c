#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dlsm/latent_sampler.hpp"

namespace {

Eigen::MatrixXd dense_band(const dlsm::BlockTridiag& k) {
  const int d = k.block_dim(), nb = k.blocks();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d * nb, d * nb);
  for (int t = 0; t < nb; ++t) {
    out.block(t * d, t * d, d, d) = k.diag(t);
    if (t + 1 < nb) {
      out.block((t + 1) * d, t * d, d, d) = k.sub(t);
      out.block(t * d, (t + 1) * d, d, d) = k.sub(t).transpose();
    }
  }
  return out;
}

Eigen::MatrixXd random_matrix(dlsm::Rng& rng, int r, int c, double scale) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * dlsm::rnorm(rng);
  return m;
}

Eigen::MatrixXd random_spd(dlsm::Rng& rng, int n, double ridge) {
  const Eigen::MatrixXd a = random_matrix(rng, n, n, 1.0);
  return a * a.transpose() + ridge * Eigen::MatrixXd::Identity(n, n);
}

// Joint prior of all trajectories given x0 under the feature-wise dynamics,
// built densely over the (time, feature, node) stacking.
struct JointPrior {
  Eigen::MatrixXd psi;
  Eigen::VectorXd mu;
};

JointPrior dense_joint_prior(const Eigen::MatrixXd& phi_t, const Eigen::MatrixXd& omega_t,
                             const Eigen::MatrixXd& x0, int d, int t_len) {
  const int n = static_cast<int>(omega_t.rows());
  const int nd = n * d;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(nd, nd), q = Eigen::MatrixXd::Zero(nd, nd);
  for (int l = 0; l < d; ++l) {
    f.block(l * n, l * n, n, n) = phi_t;
    q.block(l * n, l * n, n, n) = omega_t;
  }
  const Eigen::MatrixXd qf = q * f;
  const Eigen::MatrixXd mid = q + f.transpose() * qf;
  JointPrior jp;
  jp.psi = Eigen::MatrixXd::Zero(nd * t_len, nd * t_len);
  jp.mu.resize(nd * t_len);
  Eigen::MatrixXd cur = x0;
  for (int t = 0; t < t_len; ++t) {
    jp.psi.block(t * nd, t * nd, nd, nd) = t + 1 < t_len ? mid : q;
    if (t + 1 < t_len) {
      jp.psi.block((t + 1) * nd, t * nd, nd, nd) = -qf;
      jp.psi.block(t * nd, (t + 1) * nd, nd, nd) = -qf.transpose();
    }
    cur = phi_t * cur;
    for (int l = 0; l < d; ++l) jp.mu.segment(t * nd + l * n, n) = cur.col(l);
  }
  return jp;
}

std::vector<int> node_indices(int n, int d, int t_len, int i) {
  std::vector<int> idx;
  for (int t = 0; t < t_len; ++t)
    for (int l = 0; l < d; ++l) idx.push_back(dlsm::joint_index(n, d, i, l, t));
  return idx;
}

}  // namespace

TEST_CASE("block tridiagonal factorization matches dense linear algebra", "[latent]") {
  dlsm::Rng rng(2101, 0);
  const int d = 2, nb = 4;
  dlsm::BlockTridiag k(d, nb);
  for (int t = 0; t < nb; ++t) {
    k.diag(t) = random_spd(rng, d, 2.0);
    if (t + 1 < nb) k.sub(t) = random_matrix(rng, d, d, 0.3);
  }
  const Eigen::MatrixXd kd = dense_band(k);
  const Eigen::VectorXd v = random_matrix(rng, d * nb, 1, 1.0);
  CHECK((k.matvec(v) - kd * v).cwiseAbs().maxCoeff() < 1e-12);

  k.factorize();
  Eigen::LLT<Eigen::MatrixXd> llt(kd);
  REQUIRE(llt.info() == Eigen::Success);
  const Eigen::VectorXd b = random_matrix(rng, d * nb, 1, 1.0);
  CHECK((k.solve(b) - llt.solve(b)).cwiseAbs().maxCoeff() < 1e-10);

  const Eigen::MatrixXd lower = llt.matrixL();
  CHECK(k.log_det() == Catch::Approx(2.0 * lower.diagonal().array().log().sum()).epsilon(1e-12));

  const Eigen::VectorXd z = random_matrix(rng, d * nb, 1, 1.0);
  const Eigen::VectorXd xz = lower.transpose().triangularView<Eigen::Upper>().solve(z);
  CHECK((k.back_substitute(z) - xz).cwiseAbs().maxCoeff() < 1e-10);

  dlsm::BlockTridiag bad(1, 2);
  bad.diag(0) = -Eigen::MatrixXd::Identity(1, 1);
  bad.diag(1) = Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(bad.factorize(), dlsm::failure);
  bad.diag(0)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.factorize(), dlsm::failure);
  CHECK_THROWS_AS(k.diag(nb), dlsm::failure);
  CHECK_THROWS_AS(k.sub(nb - 1), dlsm::failure);
}

TEST_CASE("node-wise prior band reproduces the dense autoregressive oracle", "[latent]") {
  const Eigen::MatrixXd eye2 = Eigen::MatrixXd::Identity(2, 2);
  auto sys0 = dlsm::prior_precision_nodewise(Eigen::MatrixXd::Zero(2, 2), eye2,
                                             Eigen::VectorXd::Constant(2, 0.7), eye2, 3);
  CHECK((dense_band(sys0.K) - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(sys0.m.cwiseAbs().maxCoeff() == 0.0);

  // d=1, T=2, phi=0.5, upsilon=1: conditioning on x0 leaves [[1.25,-0.5],[-0.5,1]].
  Eigen::MatrixXd phi1(1, 1), ups1(1, 1);
  phi1 << 0.5;
  ups1 << 1.0;
  auto sys1 = dlsm::prior_precision_nodewise(phi1, ups1, Eigen::VectorXd::Ones(1), ups1, 2);
  Eigen::MatrixXd frozen(2, 2);
  frozen << 1.25, -0.5, -0.5, 1.0;
  CHECK((dense_band(sys1.K) - frozen).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(sys1.m[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(sys1.m[1] == Catch::Approx(0.25).margin(1e-15));

  dlsm::Rng rng(2102, 0);
  const int d = 2, t_len = 4;
  const Eigen::MatrixXd phi = random_matrix(rng, d, d, 0.4);
  const Eigen::MatrixXd ups = random_spd(rng, d, 0.5);
  const Eigen::MatrixXd omega0 = random_spd(rng, d, 0.5);
  const Eigen::VectorXd x0 = random_matrix(rng, d, 1, 1.0);
  auto sys = dlsm::prior_precision_nodewise(phi, ups, x0, omega0, t_len);

  // Dense oracle: K = H' S^{-1} H over (x0, x1, ..., xT), then the block of
  // the path coordinates.
  const int full = d * (t_len + 1);
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(full, full);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(full, full);
  s.topLeftCorner(d, d) = omega0;
  for (int t = 1; t <= t_len; ++t) {
    h.block(t * d, (t - 1) * d, d, d) = -phi;
    s.block(t * d, t * d, d, d) = ups;
  }
  const Eigen::MatrixXd joint = h.transpose() * s.llt().solve(h);
  CHECK((dense_band(sys.K) - joint.bottomRightCorner(d * t_len, d * t_len)).cwiseAbs().maxCoeff() <
        1e-10);

  Eigen::VectorXd cur = x0;
  for (int t = 0; t < t_len; ++t) {
    cur = phi * cur;
    CHECK((sys.m.segment(t * d, d) - cur).cwiseAbs().maxCoeff() < 1e-12);
  }
  dlsm::BlockTridiag fac = sys.K;
  fac.factorize();
  CHECK(fac.factored());

  CHECK_THROWS_AS(dlsm::prior_precision_nodewise(phi, -ups, x0, omega0, t_len), dlsm::failure);
  CHECK_THROWS_AS(dlsm::prior_precision_nodewise(phi, ups, x0, -omega0, t_len), dlsm::failure);
}

TEST_CASE("feature-wise conditional matches extraction from the joint precision", "[latent]") {
  dlsm::Rng rng(2103, 0);
  for (const auto& shape : {std::array<int, 3>{3, 1, 2}, std::array<int, 3>{4, 2, 3}}) {
    const int n = shape[0], d = shape[1], t_len = shape[2];
    const Eigen::MatrixXd phi_t = random_matrix(rng, n, n, 0.4);
    const Eigen::MatrixXd omega_t = random_spd(rng, n, 0.8);
    dlsm::LatentState st = dlsm::LatentState::zeros(n, d, t_len);
    st.x0 = random_matrix(rng, n, d, 1.0);
    for (int t = 0; t < t_len; ++t) st.x[static_cast<std::size_t>(t)] = random_matrix(rng, n, d, 1.0);

    const JointPrior jp = dense_joint_prior(phi_t, omega_t, st.x0, d, t_len);
    Eigen::VectorXd xflat(n * d * t_len);
    for (int k = 0; k < xflat.size(); ++k) {
      const auto ji = dlsm::joint_index_inverse(n, d, k);
      xflat[k] = st.x[static_cast<std::size_t>(ji.t)](ji.i, ji.ell);
    }

    for (int i = 0; i < n; ++i) {
      const auto idx = node_indices(n, d, t_len, i);
      const int m = static_cast<int>(idx.size());
      std::vector<int> rest;
      for (int k = 0; k < n * d * t_len; ++k)
        if (std::find(idx.begin(), idx.end(), k) == idx.end()) rest.push_back(k);

      Eigen::MatrixXd psi_ii(m, m), psi_ir(m, static_cast<int>(rest.size()));
      Eigen::VectorXd mu_i(m), dev_r(static_cast<Eigen::Index>(rest.size()));
      for (int a = 0; a < m; ++a) {
        mu_i[a] = jp.mu[idx[static_cast<std::size_t>(a)]];
        for (int b = 0; b < m; ++b)
          psi_ii(a, b) = jp.psi(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        for (std::size_t b = 0; b < rest.size(); ++b)
          psi_ir(a, static_cast<int>(b)) = jp.psi(idx[static_cast<std::size_t>(a)], rest[b]);
      }
      for (std::size_t b = 0; b < rest.size(); ++b)
        dev_r[static_cast<Eigen::Index>(b)] = xflat[rest[b]] - jp.mu[rest[b]];
      const Eigen::VectorXd mbar = mu_i - psi_ii.llt().solve(psi_ir * dev_r);

      auto sys = dlsm::prior_conditional_featurewise(phi_t, omega_t, st, i);
      CHECK((dense_band(sys.K) - psi_ii).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((sys.m - mbar).cwiseAbs().maxCoeff() < 1e-10);
    }

    // At the prior path the conditional mean is the prior mean.
    for (int t = 0; t < t_len; ++t)
      for (int k = 0; k < n * d; ++k) {
        const auto ji = dlsm::joint_index_inverse(n, d, t * n * d + k);
        st.x[static_cast<std::size_t>(t)](ji.i, ji.ell) = jp.mu[t * n * d + k];
      }
    for (int i = 0; i < n; ++i) {
      auto sys = dlsm::prior_conditional_featurewise(phi_t, omega_t, st, i);
      Eigen::VectorXd mu_i(d * t_len);
      for (int a = 0; a < d * t_len; ++a)
        mu_i[a] = jp.mu[node_indices(n, d, t_len, i)[static_cast<std::size_t>(a)]];
      CHECK((sys.m - mu_i).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("decoupled feature-wise prior equals the node-wise band", "[latent]") {
  dlsm::Rng rng(2104, 0);
  const int n = 3, d = 2, t_len = 3;
  Eigen::VectorXd omega_diag(n), phi_diag(n);
  omega_diag << 0.7, 1.3, 2.1;
  phi_diag << 0.4, -0.2, 0.6;
  const Eigen::MatrixXd omega_t = omega_diag.asDiagonal();
  const Eigen::MatrixXd phi_t = phi_diag.asDiagonal();
  dlsm::LatentState st = dlsm::LatentState::zeros(n, d, t_len);
  st.x0 = random_matrix(rng, n, d, 1.0);
  for (int t = 0; t < t_len; ++t) st.x[static_cast<std::size_t>(t)] = random_matrix(rng, n, d, 1.0);

  for (int i = 0; i < n; ++i) {
    auto fw = dlsm::prior_conditional_featurewise(phi_t, omega_t, st, i);
    const Eigen::MatrixXd phi_i = phi_diag[i] * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd ups_i = (1.0 / omega_diag[i]) * Eigen::MatrixXd::Identity(d, d);
    auto nw = dlsm::prior_precision_nodewise(phi_i, ups_i, st.x0.row(i).transpose(),
                                             Eigen::MatrixXd::Identity(d, d), t_len);
    CHECK((dense_band(fw.K) - dense_band(nw.K)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((fw.m - nw.m).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("likelihood rows follow the pseudo-observation bookkeeping", "[latent]") {
  dlsm::Rng rng(2105, 0);
  const int n = 3, t_len = 2, d = 2;
  dlsm::NetworkSeries data = dlsm::NetworkSeries::zeros(n, t_len);
  data.set(0, 0, 1, 2);
  data.set(0, 1, 2, 5);

  dlsm::LatentState st = dlsm::LatentState::zeros(n, d, t_len);
  for (int t = 0; t < t_len; ++t) st.x[static_cast<std::size_t>(t)] = random_matrix(rng, n, d, 0.3);
  dlsm::GlobalParams par;
  par.alpha.resize(n);
  par.alpha << 0.3, -0.2, 0.1;

  dlsm::AugmentedState aug = dlsm::AugmentedState::zeros(n, t_len);
  aug.w.setZero();
  for (int i = 0; i < n; ++i)
    CHECK(dlsm::assemble_likelihood(i, data, par, st, aug, dlsm::shared_tables()).empty());

  // t=0: dyads (0,1) y=2 and (0,2) y=0 active, (1,2) inflated away;
  // t=1: only (0,2) active with y=0.
  aug.w(dlsm::dyad_index(n, 0, 1), 0) = 1;
  aug.w(dlsm::dyad_index(n, 0, 2), 0) = 1;
  aug.w(dlsm::dyad_index(n, 0, 2), 1) = 1;
  dlsm::refresh_interarrivals(rng, data, par, st, dlsm::shared_tables(), aug);

  const auto rows0 = dlsm::assemble_likelihood(0, data, par, st, aug, dlsm::shared_tables());
  REQUIRE(rows0.size() == 4);
  int at_t0 = 0;
  for (const auto& r : rows0) at_t0 += r.t == 0 ? 1 : 0;
  CHECK(at_t0 == 3);
  CHECK(dlsm::assemble_likelihood(1, data, par, st, aug, dlsm::shared_tables()).size() == 2);
  CHECK(dlsm::assemble_likelihood(2, data, par, st, aug, dlsm::shared_tables()).size() == 2);

  // Row order is time, then partner, then (tau1, tau2); values put back
  // together must reproduce -log(tau) - mu_r - alpha_i - alpha_j exactly.
  struct Slot {
    int t, j;
    double tau;
    int r;
    long nu;
  };
  const int k01 = dlsm::dyad_index(n, 0, 1), k02 = dlsm::dyad_index(n, 0, 2);
  const std::vector<Slot> expect = {{0, 1, aug.tau1(k01, 0), aug.r1(k01, 0), 1},
                                    {0, 1, aug.tau2(k01, 0), aug.r2(k01, 0), 2},
                                    {0, 2, aug.tau1(k02, 0), aug.r1(k02, 0), 1},
                                    {1, 2, aug.tau1(k02, 1), aug.r1(k02, 1), 1}};
  for (std::size_t q = 0; q < expect.size(); ++q) {
    const auto& e = expect[q];
    const auto& tab = dlsm::shared_tables().lookup(e.nu);
    CHECK(rows0[q].t == e.t);
    CHECK((rows0[q].g - st.x[static_cast<std::size_t>(e.t)].row(e.j).transpose())
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(rows0[q].value ==
          Catch::Approx(-std::log(e.tau) - tab.mu[e.r] - par.alpha[0] - par.alpha[e.j])
              .margin(1e-12));
    CHECK(rows0[q].variance == tab.s2[e.r]);
  }

  dlsm::GlobalParams short_par = par;
  short_par.alpha.resize(n - 1);
  CHECK_THROWS_AS(dlsm::assemble_likelihood(0, data, short_par, st, aug, dlsm::shared_tables()),
                  dlsm::failure);
}

TEST_CASE("trajectory draws match the dense Gaussian oracle", "[latent]") {
  Eigen::MatrixXd phi1(1, 1), ups1(1, 1);
  phi1 << 0.5;
  ups1 << 1.0;

  SECTION("prior-only system") {
    auto sys = dlsm::prior_precision_nodewise(phi1, ups1, Eigen::VectorXd::Ones(1), ups1, 2);
    const Eigen::MatrixXd cov = dense_band(sys.K).llt().solve(Eigen::MatrixXd::Identity(2, 2));
    dlsm::Rng rng(2106, 0);
    const int n = 100000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d outer = Eigen::Matrix2d::Zero();
    for (int rep = 0; rep < n; ++rep) {
      const Eigen::VectorXd x = dlsm::sample_trajectory(rng, sys);
      sum += x;
      outer += (x - sys.m) * (x - sys.m).transpose();
    }
    for (int a = 0; a < 2; ++a) {
      const double se = std::sqrt(cov(a, a) / n);
      CHECK(sum[a] / n == Catch::Approx(sys.m[a]).margin(4.0 * se));
      for (int b = 0; b < 2; ++b) {
        const double se_cov = std::sqrt((cov(a, a) * cov(b, b) + cov(a, b) * cov(a, b)) / n);
        CHECK(outer(a, b) / n == Catch::Approx(cov(a, b)).margin(4.0 * se_cov));
      }
    }
  }

  SECTION("system with pseudo-observations") {
    auto sys = dlsm::prior_precision_nodewise(phi1, ups1, Eigen::VectorXd::Ones(1), ups1, 2);
    sys.rows.push_back({0, Eigen::VectorXd::Constant(1, 0.8), 0.4, 0.5});
    sys.rows.push_back({1, Eigen::VectorXd::Constant(1, -0.6), -0.2, 0.25});
    sys.rows.push_back({1, Eigen::VectorXd::Constant(1, 1.1), 0.9, 2.0});

    Eigen::MatrixXd khat = dense_band(sys.K);
    Eigen::VectorXd rhs = khat * sys.m;
    for (const auto& r : sys.rows) {
      khat(r.t, r.t) += r.g[0] * r.g[0] / r.variance;
      rhs[r.t] += r.g[0] * r.value / r.variance;
    }
    const Eigen::MatrixXd cov = khat.llt().solve(Eigen::MatrixXd::Identity(2, 2));
    const Eigen::VectorXd mean = cov * rhs;

    sys.prepare();
    CHECK((dense_band(sys.K_hat) - khat).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((sys.mean - mean).cwiseAbs().maxCoeff() < 1e-12);

    dlsm::Rng rng(2107, 0);
    const int n = 100000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d outer = Eigen::Matrix2d::Zero();
    for (int rep = 0; rep < n; ++rep) {
      const Eigen::VectorXd x = dlsm::sample_trajectory(rng, sys);
      sum += x;
      outer += (x - mean) * (x - mean).transpose();
    }
    for (int a = 0; a < 2; ++a) {
      const double se = std::sqrt(cov(a, a) / n);
      CHECK(sum[a] / n == Catch::Approx(mean[a]).margin(4.0 * se));
      for (int b = 0; b < 2; ++b) {
        const double se_cov = std::sqrt((cov(a, a) * cov(b, b) + cov(a, b) * cov(a, b)) / n);
        CHECK(outer(a, b) / n == Catch::Approx(cov(a, b)).margin(4.0 * se_cov));
      }
    }
  }

  SECTION("larger system, deterministic pieces only") {
    dlsm::Rng rng(2108, 0);
    const int d = 3, t_len = 5;
    const Eigen::MatrixXd phi = random_matrix(rng, d, d, 0.3);
    const Eigen::MatrixXd ups = random_spd(rng, d, 0.6);
    const Eigen::VectorXd x0 = random_matrix(rng, d, 1, 1.0);
    auto sys =
        dlsm::prior_precision_nodewise(phi, ups, x0, Eigen::MatrixXd::Identity(d, d), t_len);
    for (int q = 0; q < 40; ++q) {
      const int t = static_cast<int>(dlsm::runif(rng) * t_len);
      sys.rows.push_back({t, random_matrix(rng, d, 1, 1.0), dlsm::rnorm(rng),
                          0.2 + dlsm::runif(rng)});
    }
    Eigen::MatrixXd khat = dense_band(sys.K);
    Eigen::VectorXd rhs = khat * sys.m;
    for (const auto& r : sys.rows) {
      khat.block(r.t * d, r.t * d, d, d) += r.g * r.g.transpose() / r.variance;
      rhs.segment(r.t * d, d) += r.g * r.value / r.variance;
    }
    sys.prepare();
    CHECK((dense_band(sys.K_hat) - khat).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((sys.mean - khat.llt().solve(rhs)).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::LLT<Eigen::MatrixXd> llt(khat);
    const Eigen::MatrixXd lower = llt.matrixL();
    CHECK(sys.K_hat.log_det() ==
          Catch::Approx(2.0 * lower.diagonal().array().log().sum()).epsilon(1e-10));
  }

  SECTION("reproducibility and failure modes") {
    auto sys = dlsm::prior_precision_nodewise(phi1, ups1, Eigen::VectorXd::Ones(1), ups1, 2);
    dlsm::Rng a(7, 3), b(7, 3);
    const Eigen::VectorXd xa = dlsm::sample_trajectory(a, sys);
    const Eigen::VectorXd xb = dlsm::sample_trajectory(b, sys);
    CHECK(xa == xb);

    auto bad = sys;
    bad.prepared = false;
    bad.rows.push_back({5, Eigen::VectorXd::Ones(1), 0.0, 1.0});
    CHECK_THROWS_AS(bad.prepare(), dlsm::failure);
    bad.rows[0] = {0, Eigen::VectorXd::Ones(1), 0.0, -1.0};
    CHECK_THROWS_AS(bad.prepare(), dlsm::failure);

    auto nonpd = sys;
    nonpd.prepared = false;
    nonpd.rows.clear();
    nonpd.K.diag(0) = -Eigen::MatrixXd::Identity(1, 1);
    CHECK_THROWS_AS(nonpd.prepare(), dlsm::failure);
  }
}

TEST_CASE("prior-only node sweeps preserve the joint feature-wise law", "[latent]") {
  dlsm::Rng rng(2109, 0);
  const int n = 3, d = 1, t_len = 2, dim = n * d * t_len;
  const Eigen::MatrixXd phi_t = random_matrix(rng, n, n, 0.4);
  const Eigen::MatrixXd omega_t = random_spd(rng, n, 0.8);
  Eigen::MatrixXd x0(n, d);
  x0 << 0.3, -0.2, 0.5;

  const JointPrior jp = dense_joint_prior(phi_t, omega_t, x0, d, t_len);
  const Eigen::MatrixXd cov = jp.psi.llt().solve(Eigen::MatrixXd::Identity(dim, dim));
  const Eigen::MatrixXd cov_lower = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();

  dlsm::LatentState st = dlsm::LatentState::zeros(n, d, t_len);
  st.x0 = x0;
  const auto cache = dlsm::featurewise_cache(phi_t, omega_t, x0, t_len);

  const int reps = 200000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(dim, dim);
  for (int rep = 0; rep < reps; ++rep) {
    const Eigen::VectorXd start = dlsm::rmvnorm_cov(rng, jp.mu, cov_lower);
    for (int k = 0; k < dim; ++k) {
      const auto ji = dlsm::joint_index_inverse(n, d, k);
      st.x[static_cast<std::size_t>(ji.t)](ji.i, ji.ell) = start[k];
    }
    for (int i = 0; i < n; ++i) {
      auto sys = dlsm::prior_conditional_featurewise(cache, st, i);
      dlsm::scatter_trajectory(dlsm::sample_trajectory(rng, sys), i, st);
    }
    Eigen::VectorXd after(dim);
    for (int k = 0; k < dim; ++k) {
      const auto ji = dlsm::joint_index_inverse(n, d, k);
      after[k] = st.x[static_cast<std::size_t>(ji.t)](ji.i, ji.ell);
    }
    sum += after;
    outer += (after - jp.mu) * (after - jp.mu).transpose();
  }
  for (int a = 0; a < dim; ++a) {
    const double se = std::sqrt(cov(a, a) / reps);
    CHECK(sum[a] / reps == Catch::Approx(jp.mu[a]).margin(4.0 * se));
    for (int b = a; b < dim; ++b) {
      const double se_cov = std::sqrt((cov(a, a) * cov(b, b) + cov(a, b) * cov(a, b)) / reps);
      CHECK(outer(a, b) / reps == Catch::Approx(cov(a, b)).margin(4.0 * se_cov));
    }
  }
}

TEST_CASE("initial state draw matches its conditional oracle", "[latent]") {
  for (int i = 0; i < 3; ++i)
    for (int l = 0; l < 2; ++l)
      for (int t = 0; t < 4; ++t) {
        const int k = dlsm::joint_index(3, 2, i, l, t);
        const auto ji = dlsm::joint_index_inverse(3, 2, k);
        CHECK((ji.i == i && ji.ell == l && ji.t == t));
      }
  for (int k = 0; k < 3 * 2 * 4; ++k) {
    const auto ji = dlsm::joint_index_inverse(3, 2, k);
    CHECK(dlsm::joint_index(3, 2, ji.i, ji.ell, ji.t) == k);
  }

  dlsm::ModelConfig cfg;
  cfg.prior.x0_mean = 0.3;
  cfg.prior.x0_var = 2.0;

  SECTION("node-wise, no information flowing back") {
    cfg.parametrization = dlsm::Parametrization::NodeWise;
    dlsm::GlobalParams par;
    par.phi = Eigen::MatrixXd::Zero(1, 1);
    par.cov = Eigen::MatrixXd::Identity(1, 1);
    dlsm::LatentState st = dlsm::LatentState::zeros(2, 1, 1);
    st.x[0] << 1.4, -0.9;
    dlsm::Rng rng(2110, 0);
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int rep = 0; rep < n; ++rep) {
      dlsm::sample_initial_state(rng, par, cfg, st);
      sum += st.x0(0, 0);
      sq += (st.x0(0, 0) - 0.3) * (st.x0(0, 0) - 0.3);
    }
    CHECK(sum / n == Catch::Approx(0.3).margin(4.0 * std::sqrt(2.0 / n)));
    CHECK(sq / n == Catch::Approx(2.0).margin(4.0 * 2.0 * std::sqrt(2.0 / n)));
  }

  SECTION("node-wise informative oracle") {
    cfg.parametrization = dlsm::Parametrization::NodeWise;
    dlsm::GlobalParams par;
    par.phi = Eigen::MatrixXd::Constant(1, 1, 0.6);
    par.cov = Eigen::MatrixXd::Constant(1, 1, 0.8);
    dlsm::LatentState st = dlsm::LatentState::zeros(2, 1, 1);
    st.x[0] << 1.4, -0.9;
    const double prec = 0.6 * 0.6 / 0.8 + 1.0 / 2.0;
    dlsm::Rng rng(2111, 0);
    const int n = 200000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
    for (int rep = 0; rep < n; ++rep) {
      dlsm::sample_initial_state(rng, par, cfg, st);
      for (int i = 0; i < 2; ++i) {
        sum[i] += st.x0(i, 0);
        sq[i] += st.x0(i, 0) * st.x0(i, 0);
      }
    }
    for (int i = 0; i < 2; ++i) {
      const double mean = (0.6 / 0.8 * st.x[0](i, 0) + 0.3 / 2.0) / prec;
      const double se = std::sqrt(1.0 / prec / n);
      CHECK(sum[i] / n == Catch::Approx(mean).margin(4.0 * se));
      const double var_hat = sq[i] / n - (sum[i] / n) * (sum[i] / n);
      CHECK(var_hat == Catch::Approx(1.0 / prec).margin(4.0 / prec * std::sqrt(2.0 / n)));
    }
  }

  SECTION("feature-wise dense oracle") {
    cfg.parametrization = dlsm::Parametrization::FeatureWise;
    dlsm::GlobalParams par;
    par.phi.resize(2, 2);
    par.phi << 0.5, 0.2, -0.1, 0.7;
    par.cov.resize(2, 2);
    par.cov << 1.2, -0.4, -0.4, 0.9;
    dlsm::LatentState st = dlsm::LatentState::zeros(2, 1, 1);
    st.x[0] << 1.4, -0.9;

    Eigen::MatrixXd prec = par.phi.transpose() * par.cov * par.phi;
    prec.diagonal().array() += 1.0 / 2.0;
    const Eigen::MatrixXd cov = prec.llt().solve(Eigen::MatrixXd::Identity(2, 2));
    const Eigen::VectorXd mean =
        cov * (par.phi.transpose() * par.cov * st.x[0].col(0) +
               Eigen::VectorXd::Constant(2, 0.3 / 2.0));

    dlsm::Rng rng(2112, 0);
    const int n = 200000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    double cross = 0.0;
    for (int rep = 0; rep < n; ++rep) {
      dlsm::sample_initial_state(rng, par, cfg, st);
      sum += st.x0.col(0);
      cross += (st.x0(0, 0) - mean[0]) * (st.x0(1, 0) - mean[1]);
    }
    for (int i = 0; i < 2; ++i) {
      const double se = std::sqrt(cov(i, i) / n);
      CHECK(sum[i] / n == Catch::Approx(mean[i]).margin(4.0 * se));
    }
    const double se_cov = std::sqrt((cov(0, 0) * cov(1, 1) + cov(0, 1) * cov(0, 1)) / n);
    CHECK(cross / n == Catch::Approx(cov(0, 1)).margin(4.0 * se_cov));
  }

  SECTION("feature-wise, no information flowing back") {
    cfg.parametrization = dlsm::Parametrization::FeatureWise;
    dlsm::GlobalParams par;
    par.phi = Eigen::MatrixXd::Zero(2, 2);
    par.cov = Eigen::MatrixXd::Identity(2, 2);
    dlsm::LatentState st = dlsm::LatentState::zeros(2, 1, 1);
    st.x[0] << 1.4, -0.9;
    dlsm::Rng rng(2113, 0);
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int rep = 0; rep < n; ++rep) {
      dlsm::sample_initial_state(rng, par, cfg, st);
      sum += st.x0(1, 0);
      sq += (st.x0(1, 0) - 0.3) * (st.x0(1, 0) - 0.3);
    }
    CHECK(sum / n == Catch::Approx(0.3).margin(4.0 * std::sqrt(2.0 / n)));
    CHECK(sq / n == Catch::Approx(2.0).margin(4.0 * 2.0 * std::sqrt(2.0 / n)));
  }
}
