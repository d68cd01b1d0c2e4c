#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlsm/config.hpp"
#include "dlsm/gibbs.hpp"
#include "dlsm/synthetic.hpp"

namespace dlsm {

// Count panel as delimited text, one dyad-time per row, 1-based indices.
inline void write_counts_csv(const std::string& path, const NetworkSeries& data) {
  std::ofstream f(path);
  require(f.good(), "cannot write '" + path + "'");
  f << "i,j,t,y\n";
  for (int t = 0; t < data.T; ++t)
    for (int j = 1; j < data.N; ++j)
      for (int i = 0; i < j; ++i)
        f << (i + 1) << "," << (j + 1) << "," << (t + 1) << ","
          << data.counts(dyad_index(data.N, i, j), t) << "\n";
  require(f.good(), "write failed for '" + path + "'");
}

inline NetworkSeries read_counts_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), "'" + path + "': empty file");
  require(line == "i,j,t,y", "'" + path + "': expected header i,j,t,y");

  struct Row {
    int i, j, t;
    long y;
  };
  std::vector<Row> rows;
  int n = 0, t_len = 0;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Row r;
    require(static_cast<bool>(ss >> r.i >> r.j >> r.t >> r.y),
            "'" + path + "' line " + std::to_string(line_no) + ": expected i,j,t,y");
    require(r.i >= 1 && r.j > r.i && r.t >= 1 && r.y >= 0,
            "'" + path + "' line " + std::to_string(line_no) +
                ": need 1 <= i < j, t >= 1, y >= 0");
    n = std::max(n, r.j);
    t_len = std::max(t_len, r.t);
    rows.push_back(r);
  }
  require(n >= 2 && t_len >= 1, "'" + path + "': no data rows");
  auto data = NetworkSeries::zeros(n, t_len);
  Eigen::ArrayXXi seen = Eigen::ArrayXXi::Zero(n_dyads(n), t_len);
  for (const auto& r : rows) {
    const int k = dyad_index(n, r.i - 1, r.j - 1);
    require(seen(k, r.t - 1) == 0, "'" + path + "': duplicate cell (" + std::to_string(r.i) +
                                       "," + std::to_string(r.j) + "," + std::to_string(r.t) + ")");
    seen(k, r.t - 1) = 1;
    data.counts(k, r.t - 1) = static_cast<int>(r.y);
  }
  require((seen == 1).all(), "'" + path + "': not every dyad-time cell is present");
  return data;
}

namespace detail {

struct ArrayDescriptor {
  std::string file;
  std::vector<long> dims;
  long size = 1;
};

inline ArrayDescriptor parse_array(KeyValueFile& kv, const std::string& name) {
  require(kv.has("array." + name), "manifest: missing group 'array." + name + "'");
  std::istringstream ss(kv.get_string("array." + name, ""));
  ArrayDescriptor a;
  require(static_cast<bool>(ss >> a.file), "manifest: bad descriptor for '" + name + "'");
  long dim;
  while (ss >> dim) {
    require(dim >= 0, "manifest: negative dimension for '" + name + "'");
    a.dims.push_back(dim);
    a.size *= dim;
  }
  require(!a.dims.empty(), "manifest: no dimensions for '" + name + "'");
  return a;
}

inline std::vector<double> read_group(const std::string& dir, KeyValueFile& kv,
                                      const std::string& name, ArrayDescriptor* desc = nullptr) {
  const auto a = parse_array(kv, name);
  auto buf = read_f64(dir + "/" + a.file);
  require(static_cast<long>(buf.size()) == a.size,
          "'" + a.file + "': size does not match manifest dimensions");
  if (desc) *desc = a;
  return buf;
}

}  // namespace detail

// Rebuild a ChainOutput from a chain directory; the inverse of write_chain
// up to the NaN padding, which is stripped using the per-draw dimensions.
inline ChainOutput load_chain(const std::string& dir) {
  require(std::filesystem::exists(dir + "/manifest.txt"),
          "'" + dir + "': no manifest.txt (not a chain directory)");
  auto kv = read_manifest(dir);
  require(kv.get_string("format", "") == "dlsm-chain-1",
          "'" + dir + "': unrecognized chain format");

  ChainOutput out;
  out.config_hash = kv.get_string("config_hash", "");
  out.seed = static_cast<std::uint64_t>(kv.get_long("seed", 0));
  out.chain_index = static_cast<int>(kv.get_long("chain_index", 0));
  out.N = static_cast<int>(kv.get_long("n_nodes", 0));
  out.L = static_cast<int>(kv.get_long("n_covariates", 1));
  out.T = static_cast<int>(kv.get_long("n_times", 0));
  out.n_kept = kv.get_long("n_kept", 0);
  out.n_kept_x = kv.get_long("n_kept_x", 0);
  out.wall_seconds = kv.get_double("wall_seconds", 0.0);
  out.truncated = kv.get_bool("truncated", false);
  if (out.truncated) {
    out.truncated_at = kv.get_long("truncated_at", -1);
    out.fail_block = kv.get_string("fail_block", "");
    out.fail_message = kv.get_string("fail_message", "");
  }
  {
    std::ifstream cf(dir + "/" + kv.get_string("config_file", "config.txt"));
    require(cf.good(), "'" + dir + "': cannot open config echo");
    std::ostringstream ss;
    ss << cf.rdbuf();
    out.config_text = ss.str();
  }

  const long K = out.n_kept;
  {
    const auto buf = detail::read_group(dir, kv, "d");
    require(static_cast<long>(buf.size()) == K, "'d.f64': draw count mismatch");
    out.d.resize(buf.size());
    for (std::size_t k = 0; k < buf.size(); ++k) out.d[k] = static_cast<int>(buf[k]);
  }
  {
    const auto buf = detail::read_group(dir, kv, "alpha");
    out.alpha.resize(K, out.N);
    for (long k = 0; k < K; ++k)
      for (int i = 0; i < out.N; ++i) out.alpha(k, i) = buf[static_cast<std::size_t>(k * out.N + i)];
  }
  {
    const auto buf = detail::read_group(dir, kv, "beta");
    const long cols = static_cast<long>(out.L) * out.N;
    out.beta.resize(K, cols);
    for (long k = 0; k < K; ++k)
      for (long c = 0; c < cols; ++c) out.beta(k, c) = buf[static_cast<std::size_t>(k * cols + c)];
  }
  {
    detail::ArrayDescriptor desc;
    const auto bphi = detail::read_group(dir, kv, "phi", &desc);
    const auto bcov = detail::read_group(dir, kv, "cov");
    require(desc.dims.size() == 3, "manifest: 'phi' needs draws x p x p dimensions");
    const long p = desc.dims[1];
    for (long k = 0; k < K; ++k) {
      const int dk = out.d[static_cast<std::size_t>(k)];
      require(dk <= p, "'phi.f64': draw dimension exceeds padded size");
      Eigen::MatrixXd ph(dk, dk), cv(dk, dk);
      for (int a = 0; a < dk; ++a)
        for (int b = 0; b < dk; ++b) {
          ph(a, b) = bphi[static_cast<std::size_t>((k * p + a) * p + b)];
          cv(a, b) = bcov[static_cast<std::size_t>((k * p + a) * p + b)];
        }
      out.phi.push_back(ph);
      out.cov.push_back(cv);
    }
  }
  if (kv.has("array.w")) {
    const auto buf = detail::read_group(dir, kv, "w");
    const long cols = static_cast<long>(out.T) * n_dyads(out.N);
    out.w.resize(K, cols);
    for (long k = 0; k < K; ++k)
      for (long c = 0; c < cols; ++c)
        out.w(k, c) = static_cast<std::int8_t>(buf[static_cast<std::size_t>(k * cols + c)]);
  }
  if (kv.has("array.x")) {
    detail::ArrayDescriptor desc;
    const auto bx = detail::read_group(dir, kv, "x", &desc);
    const auto bx0 = detail::read_group(dir, kv, "x0");
    require(desc.dims.size() == 4, "manifest: 'x' needs draws x T x N x d dimensions");
    const long dmax = desc.dims[3];
    auto cfg_kv = KeyValueFile::parse_text(out.config_text);
    const long x_thin = cfg_kv.get_long("mcmc.x_thin", 1);
    for (long kx = 0; kx < out.n_kept_x; ++kx) {
      const long kept_index = kx * x_thin;
      require(kept_index < K, "'x.f64': stored draw beyond retained range");
      const int dk = out.d[static_cast<std::size_t>(kept_index)];
      auto st = LatentState::zeros(out.N, dk, out.T);
      for (int t = 0; t < out.T; ++t)
        for (int i = 0; i < out.N; ++i)
          for (int ell = 0; ell < dk; ++ell)
            st.x[static_cast<std::size_t>(t)](i, ell) =
                bx[static_cast<std::size_t>(((kx * out.T + t) * out.N + i) * dmax + ell)];
      for (int i = 0; i < out.N; ++i)
        for (int ell = 0; ell < dk; ++ell)
          st.x0(i, ell) = bx0[static_cast<std::size_t>((kx * out.N + i) * dmax + ell)];
      out.x.push_back(st);
    }
  }
  return out;
}

// Inverse of write_truth.
inline GroundTruth read_truth(const std::string& dir) {
  require(std::filesystem::exists(dir + "/manifest.txt"),
          "'" + dir + "': no manifest.txt (not a truth directory)");
  auto kv = read_manifest(dir);
  require(kv.get_bool("truth", false), "'" + dir + "': manifest does not mark a truth directory");
  const int n = static_cast<int>(kv.get_long("n_nodes", 0));
  const int t_len = static_cast<int>(kv.get_long("n_times", 0));
  const int m = n_dyads(n);

  GroundTruth truth;
  truth.d = static_cast<int>(detail::read_group(dir, kv, "d")[0]);
  {
    const auto buf = detail::read_group(dir, kv, "alpha");
    truth.alpha.resize(n);
    for (int i = 0; i < n; ++i) truth.alpha[i] = buf[static_cast<std::size_t>(i)];
  }
  {
    const auto buf = detail::read_group(dir, kv, "beta");
    truth.beta.resize(n, 1);
    for (int i = 0; i < n; ++i) truth.beta(i, 0) = buf[static_cast<std::size_t>(i)];
  }
  {
    const auto bx = detail::read_group(dir, kv, "x");
    const auto bx0 = detail::read_group(dir, kv, "x0");
    truth.x = LatentState::zeros(n, truth.d, t_len);
    for (int t = 0; t < t_len; ++t)
      for (int i = 0; i < n; ++i)
        for (int ell = 0; ell < truth.d; ++ell)
          truth.x.x[static_cast<std::size_t>(t)](i, ell) =
              bx[static_cast<std::size_t>((static_cast<long>(t) * n + i) * truth.d + ell)];
    for (int i = 0; i < n; ++i)
      for (int ell = 0; ell < truth.d; ++ell)
        truth.x.x0(i, ell) = bx0[static_cast<std::size_t>(static_cast<long>(i) * truth.d + ell)];
  }
  auto read_panel = [&](const std::string& name) {
    const auto buf = detail::read_group(dir, kv, name);
    Eigen::ArrayXXd panel(m, t_len);
    for (int t = 0; t < t_len; ++t)
      for (int k = 0; k < m; ++k) panel(k, t) = buf[static_cast<std::size_t>(static_cast<long>(t) * m + k)];
    return panel;
  };
  truth.w = read_panel("w").cast<int>();
  truth.z = read_panel("z");
  truth.log_lambda = read_panel("log_lambda");
  {
    const auto buf = detail::read_group(dir, kv, "sigma");
    truth.sigma.resize(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) truth.sigma(a, b) = buf[static_cast<std::size_t>(static_cast<long>(a) * n + b)];
  }
  return truth;
}

// Synthetic-panel settings from the same flat key-value format as the model
// config; unknown keys are reported by name.
inline SyntheticSpec parse_synthetic_spec(KeyValueFile& kv) {
  SyntheticSpec spec;
  spec.n = static_cast<int>(kv.get_long("sim.n_nodes", spec.n));
  spec.d = static_cast<int>(kv.get_long("sim.d", spec.d));
  spec.t_len = static_cast<int>(kv.get_long("sim.n_times", spec.t_len));
  spec.alpha_mean = kv.get_double("sim.alpha_mean", spec.alpha_mean);
  spec.alpha_sd = kv.get_double("sim.alpha_sd", spec.alpha_sd);
  spec.beta_mean = kv.get_double("sim.beta_mean", spec.beta_mean);
  spec.beta_sd = kv.get_double("sim.beta_sd", spec.beta_sd);
  spec.ar = kv.get_double("sim.ar", spec.ar);
  spec.sigma2 = kv.get_double("sim.sigma2", spec.sigma2);
  spec.rho = kv.get_double("sim.rho", spec.rho);
  spec.zero_share = kv.get_double("sim.zero_share", spec.zero_share);
  if (kv.has("sim.blocks")) {
    spec.blocks.clear();
    for (double b : kv.get_double_list("sim.blocks", {}))
      spec.blocks.push_back(static_cast<int>(b));
  } else {
    spec.blocks = default_blocks(spec.n);
  }
  return spec;
}

}  // namespace dlsm
