#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "dlsm/common.hpp"
#include "dlsm/special.hpp"

namespace dlsm {

// Negative log-gamma density with integer shape nu:
// p(e | nu) = exp(-nu e - exp(-e)) / Gamma(nu). Mean -psi(nu), var psi'(nu).
inline double neg_log_gamma_log_pdf(long nu, double e) {
  return -static_cast<double>(nu) * e - std::exp(-e) - std::lgamma(static_cast<double>(nu));
}

struct MixtureComponents {
  long nu = 0;
  int R = 0;
  Eigen::ArrayXd c, mu, s2;
  Eigen::ArrayXd log_c, log_nc;  // cached: log weights, -0.5 log(2 pi s2)
  double kl = 0.0;               // achieved KL(exact || mixture)

  void finalize() {
    R = static_cast<int>(c.size());
    log_c = c.log();
    log_nc = -0.5 * (s2 * 2.0 * M_PI).log();
  }

  double log_pdf(double e) const {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::ArrayXd terms(R);
    for (int k = 0; k < R; ++k) {
      const double z = e - mu[k];
      terms[k] = log_c[k] + log_nc[k] - 0.5 * z * z / s2[k];
      best = std::max(best, terms[k]);
    }
    if (!std::isfinite(best)) return best;
    return best + std::log((terms - best).exp().sum());
  }

  double cdf(double e) const {
    double acc = 0.0;
    for (int k = 0; k < R; ++k) acc += c[k] * norm_cdf((e - mu[k]) / std::sqrt(s2[k]));
    return acc;
  }

  double mean() const { return (c * mu).sum(); }
  double variance() const {
    const double m = mean();
    return (c * (s2 + (mu - m).square())).sum();
  }
};

namespace detail {

struct DensityGrid {
  Eigen::ArrayXd e;     // abscissae
  Eigen::ArrayXd w;     // normalized exact masses
  Eigen::ArrayXd logp;  // exact log density
};

// Uniform grid covering everything within 45 log units of the peak.
inline DensityGrid neg_log_gamma_grid(long nu, int points) {
  const double mode = -std::log(static_cast<double>(nu));
  const double sd = std::sqrt(trigamma(static_cast<double>(nu)));
  const double logpeak = neg_log_gamma_log_pdf(nu, mode);
  double lo = mode, hi = mode;
  while (neg_log_gamma_log_pdf(nu, lo) > logpeak - 45.0) lo -= 0.25 * sd;
  while (neg_log_gamma_log_pdf(nu, hi) > logpeak - 45.0) hi += 0.25 * sd;
  DensityGrid g;
  g.e = Eigen::ArrayXd::LinSpaced(points, lo, hi);
  g.logp.resize(points);
  for (int i = 0; i < points; ++i) g.logp[i] = neg_log_gamma_log_pdf(nu, g.e[i]);
  g.w = (g.logp - g.logp.maxCoeff()).exp();
  // Trapezoid end-point halving, then normalization.
  g.w[0] *= 0.5;
  g.w[points - 1] *= 0.5;
  g.w /= g.w.sum();
  return g;
}

// KL(exact || mixture) by quadrature over the grid. The exact density is
// normalized, so E_p[log p - log q] needs no discretization constant.
inline double grid_kl(const DensityGrid& g, const MixtureComponents& mix) {
  double kl = 0.0;
  for (int i = 0; i < g.e.size(); ++i) kl += g.w[i] * (g.logp[i] - mix.log_pdf(g.e[i]));
  return kl;
}

}  // namespace detail

// Weighted EM against the gridded exact density; deterministic restarts.
// Component placement happens on a coarse grid, the fine grid only polishes.
inline MixtureComponents fit_mixture(long nu, int R, double tol = 1e-4) {
  require(nu >= 1 && R >= 1, "fit_mixture: need nu >= 1, R >= 1");
  const int points = nu <= 4 ? 4001 : 2001;
  const detail::DensityGrid g = detail::neg_log_gamma_grid(nu, points);
  const detail::DensityGrid g_coarse = detail::neg_log_gamma_grid(nu, 501);
  const double exact_mean = -digamma(static_cast<double>(nu));
  const double exact_var = trigamma(static_cast<double>(nu));

  // EM improves KL sublinearly near the optimum, so convergence is judged on
  // the KL itself: stop once inside the target or once it plateaus. The KL
  // quadrature costs about one E-step, so checking often is cheap.
  auto em_pass = [&](const detail::DensityGrid& grid, MixtureComponents& mix, int max_iter,
                     double kl_target) {
    const int n = static_cast<int>(grid.e.size());
    double prev_kl = std::numeric_limits<double>::infinity();
    Eigen::ArrayXXd resp(n, R);
    for (int iter = 0; iter < max_iter; ++iter) {
      // E-step, vectorized over the grid per component.
      for (int k = 0; k < R; ++k)
        resp.col(k) =
            mix.log_c[k] + mix.log_nc[k] - 0.5 * (grid.e - mix.mu[k]).square() / mix.s2[k];
      const Eigen::ArrayXd rowmax = resp.rowwise().maxCoeff();
      resp.colwise() -= rowmax;
      resp = resp.exp();
      const Eigen::ArrayXd rowsum = resp.rowwise().sum();
      resp.colwise() *= grid.w / rowsum;
      // M-step.
      for (int k = 0; k < R; ++k) {
        const double ck = std::max(resp.col(k).sum(), 1e-12);
        const double mk = (resp.col(k) * grid.e).sum() / ck;
        const double vk =
            std::max((resp.col(k) * (grid.e - mk).square()).sum() / ck, 1e-10 * exact_var);
        mix.c[k] = ck;
        mix.mu[k] = mk;
        mix.s2[k] = vk;
      }
      mix.c /= mix.c.sum();
      mix.finalize();
      if ((iter + 1) % 10 == 0) {
        const double kl = detail::grid_kl(grid, mix);
        if (kl <= kl_target) break;
        if (std::fabs(prev_kl - kl) < 5e-3 * std::max(kl, 1e-300)) break;  // plateau
        prev_kl = kl;
      }
    }
  };

  MixtureComponents best;
  double best_kl = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < 5 && best_kl > tol; ++restart) {
    MixtureComponents mix;
    mix.nu = nu;
    mix.c = Eigen::ArrayXd::Constant(R, 1.0 / R);
    mix.mu.resize(R);
    mix.s2.resize(R);
    // Quantile-spread initialization, jittered deterministically per restart.
    const int n = static_cast<int>(g.e.size());
    Eigen::ArrayXd cum(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += g.w[i];
      cum[i] = acc;
    }
    for (int k = 0; k < R; ++k) {
      const double target = (k + 0.5 + 0.2 * restart * ((k % 2) ? 1 : -1) / (restart + 1.0)) / R;
      const double tq = std::min(std::max(target, 1e-4), 1.0 - 1e-4);
      int idx = 0;
      while (idx < n - 1 && cum[idx] < tq) ++idx;
      mix.mu[k] = g.e[idx];
      mix.s2[k] = exact_var / (R * R) * (1.0 + 0.3 * restart);
    }
    mix.finalize();

    em_pass(g_coarse, mix, 1600, 0.5 * tol);
    em_pass(g, mix, 400, 0.9 * tol);
    mix.kl = detail::grid_kl(g, mix);
    if (mix.kl < best_kl) {
      best_kl = mix.kl;
      best = mix;
    }
  }

  require(best_kl <= tol, "fit_mixture: KL tolerance not reached for nu=" + std::to_string(nu) +
                              " (got " + std::to_string(best_kl) + ")");
  require(std::fabs(best.mean() - exact_mean) <= 1e-2 &&
              std::fabs(best.variance() - exact_var) <= 1e-2,
          "fit_mixture: fitted moments off for nu=" + std::to_string(nu));
  return best;
}

inline constexpr long kNuTab = 100;

inline int schedule_R(long nu) {
  if (nu <= 4) return 10;
  if (nu <= 19) return 6;
  return 3;
}

// Lazy cache of fits at integer shapes; above kNuTab a single moment-matched
// Gaussian is exact enough and costs nothing.
class MixtureTables {
 public:
  const MixtureComponents& lookup(long nu) {
    require(nu >= 1, "MixtureTables::lookup: nu must be >= 1");
    std::lock_guard<std::mutex> hold(gate_);
    auto it = cache_.find(nu);
    if (it != cache_.end()) return it->second;
    MixtureComponents mix;
    if (nu > kNuTab) {
      mix.nu = nu;
      mix.c = Eigen::ArrayXd::Ones(1);
      mix.mu = Eigen::ArrayXd::Constant(1, -digamma(static_cast<double>(nu)));
      mix.s2 = Eigen::ArrayXd::Constant(1, trigamma(static_cast<double>(nu)));
      mix.finalize();
      mix.kl = 0.0;
    } else {
      mix = fit_mixture(nu, schedule_R(nu));
    }
    return cache_.emplace(nu, std::move(mix)).first->second;
  }

  void save(const std::string& path) const {
    std::ostringstream body;
    body.precision(17);
    for (const auto& [nu, mix] : cache_) {
      body << "nu=" << nu << " R=" << mix.R << "\n";
      body << "k,c,mu,sigma2\n";
      for (int k = 0; k < mix.R; ++k)
        body << (k + 1) << "," << mix.c[k] << "," << mix.mu[k] << "," << mix.s2[k] << "\n";
    }
    std::ofstream out(path);
    require(out.good(), "MixtureTables::save: cannot write '" + path + "'");
    out << body.str();
    out << "checksum=" << fnv1a(body.str()) << "\n";
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "MixtureTables::load: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    const auto mark = text.rfind("checksum=");
    require(mark != std::string::npos, "MixtureTables::load: missing checksum");
    const std::string body = text.substr(0, mark);
    std::string declared = text.substr(mark + 9);
    while (!declared.empty() && (declared.back() == '\n' || declared.back() == '\r'))
      declared.pop_back();
    require(declared == fnv1a(body), "MixtureTables::load: checksum mismatch in '" + path + "'");
    std::istringstream lines(body);
    std::string line;
    std::lock_guard<std::mutex> hold(gate_);
    MixtureComponents cur;
    std::vector<double> c, mu, s2;
    auto flush = [&]() {
      if (cur.nu == 0) return;
      cur.c = Eigen::Map<Eigen::ArrayXd>(c.data(), static_cast<long>(c.size()));
      cur.mu = Eigen::Map<Eigen::ArrayXd>(mu.data(), static_cast<long>(mu.size()));
      cur.s2 = Eigen::Map<Eigen::ArrayXd>(s2.data(), static_cast<long>(s2.size()));
      cur.finalize();
      cache_[cur.nu] = cur;
      c.clear();
      mu.clear();
      s2.clear();
      cur = MixtureComponents{};
    };
    while (std::getline(lines, line)) {
      if (line.rfind("nu=", 0) == 0) {
        flush();
        long nu;
        int r;
        require(std::sscanf(line.c_str(), "nu=%ld R=%d", &nu, &r) == 2,
                "MixtureTables::load: bad block header");
        cur.nu = nu;
      } else if (line.rfind("k,", 0) == 0 || line.empty()) {
        continue;
      } else {
        int k;
        double cv, mv, sv;
        require(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &k, &cv, &mv, &sv) == 4,
                "MixtureTables::load: bad row");
        c.push_back(cv);
        mu.push_back(mv);
        s2.push_back(sv);
      }
    }
    flush();
  }

  std::size_t size() const { return cache_.size(); }

 private:
  static std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }

  mutable std::mutex gate_;
  std::map<long, MixtureComponents> cache_;
};

// Fits are deterministic, so one process-wide table serves every chain.
inline MixtureTables& shared_tables() {
  static MixtureTables tables;
  return tables;
}

}  // namespace dlsm
