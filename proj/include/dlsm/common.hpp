#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dlsm {

// Unrecoverable sampler/fit state; callers abort the chain, never fall back silently.
struct failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw failure(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

inline double log_sum_exp(const double* v, std::size_t n) {
  if (n == 0) return -std::numeric_limits<double>::infinity();
  double m = v[0];
  for (std::size_t k = 1; k < n; ++k) m = std::max(m, v[k]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k] - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& v) { return log_sum_exp(v.data(), v.size()); }

// Number of dyads i<j among N nodes.
inline int n_dyads(int n) { return n * (n - 1) / 2; }

// Linear index of dyad (i,j), 0-based, i<j, row-major over the strict upper triangle.
inline int dyad_index(int n, int i, int j) {
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

struct Dyad {
  int i, j;
};

// Inverse of dyad_index by direct enumeration order.
inline std::vector<Dyad> dyad_list(int n) {
  std::vector<Dyad> out;
  out.reserve(static_cast<std::size_t>(n_dyads(n)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.push_back({i, j});
  return out;
}

inline int thread_budget() {
  if (const char* env = std::getenv("DLSM_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Static partition across at most thread_budget() workers. Safe only when the
// body is schedule-independent (counter-based RNG substreams).
inline void parallel_for(int begin, int end, const std::function<void(int)>& body) {
  int n = end - begin;
  if (n <= 0) return;
  int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int k = begin; k < end; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::atomic<int> next{begin};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int k = next.fetch_add(1); k < end; k = next.fetch_add(1)) body(k);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dlsm
