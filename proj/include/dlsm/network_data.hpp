#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlsm/common.hpp"

namespace dlsm {

// T undirected count snapshots, strict upper triangle only (i < j), plus
// node covariates (default: intercept-only, constant one).
struct NetworkSeries {
  int N = 0, T = 0, L = 1;
  Eigen::ArrayXXi counts;          // n_dyads(N) x T
  std::vector<Eigen::MatrixXd> v;  // T entries, N x L

  static NetworkSeries zeros(int n, int t, int l = 1) {
    NetworkSeries s;
    s.N = n;
    s.T = t;
    s.L = l;
    s.counts = Eigen::ArrayXXi::Zero(n_dyads(n), t);
    s.v.assign(static_cast<std::size_t>(t), Eigen::MatrixXd::Ones(n, l));
    return s;
  }

  int y(int t, int i, int j) const { return counts(dyad_index(N, i, j), t); }
  void set(int t, int i, int j, int val) {
    require(i < j && i >= 0 && j < N && t >= 0 && t < T && val >= 0, "NetworkSeries::set: bad entry");
    counts(dyad_index(N, i, j), t) = val;
  }
};

// Long format: optional `# nodes=N times=T` shape line, then header
// `t,i,j,count` with 1-based indices; omitted dyads are zero.
inline void write_network_long(const std::string& path, const NetworkSeries& s) {
  std::ofstream out(path);
  require(out.good(), "cannot write '" + path + "'");
  out << "# nodes=" << s.N << " times=" << s.T << "\n";
  out << "t,i,j,count\n";
  const auto dyads = dyad_list(s.N);
  for (int t = 0; t < s.T; ++t)
    for (int m = 0; m < n_dyads(s.N); ++m)
      if (s.counts(m, t) != 0)
        out << (t + 1) << "," << (dyads[m].i + 1) << "," << (dyads[m].j + 1) << ","
            << s.counts(m, t) << "\n";
  require(out.good(), "write failed for '" + path + "'");
}

inline NetworkSeries read_network_long(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open network file '" + path + "'");
  std::string line;
  int n = 0, t_max = 0;
  bool shape_given = false;
  struct Row {
    int t, i, j, c;
  };
  std::vector<Row> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      int nn, tt;
      if (std::sscanf(line.c_str(), "# nodes=%d times=%d", &nn, &tt) == 2) {
        n = nn;
        t_max = tt;
        shape_given = true;
      }
      continue;
    }
    if (line.rfind("t,", 0) == 0) continue;  // header
    Row r;
    char sep;
    std::istringstream ss(line);
    if (!(ss >> r.t >> sep >> r.i >> sep >> r.j >> sep >> r.c))
      fail("network file '" + path + "' line " + std::to_string(lineno) + ": parse error");
    require(r.t >= 1 && r.i >= 1 && r.j >= 1 && r.i < r.j && r.c >= 0,
            "network file '" + path + "' line " + std::to_string(lineno) + ": bad dyad");
    rows.push_back(r);
    if (!shape_given) {
      n = std::max(n, r.j);
      t_max = std::max(t_max, r.t);
    }
  }
  require(n >= 2 && t_max >= 1, "network file '" + path + "': empty or missing shape");
  NetworkSeries s = NetworkSeries::zeros(n, t_max);
  for (const auto& r : rows) {
    require(r.j <= n && r.t <= t_max, "network file '" + path + "': entry outside declared shape");
    s.counts(dyad_index(n, r.i - 1, r.j - 1), r.t - 1) = r.c;
  }
  return s;
}

}  // namespace dlsm
