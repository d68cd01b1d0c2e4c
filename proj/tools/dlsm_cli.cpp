// Command-line surface: simulate / fit / diagnose / summarize over the
// flat key-value config format. Exit codes: 0 ok, 2 config or format error,
// 3 sampler failure, 4 missing input.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dlsm/diagnostics.hpp"
#include "dlsm/gibbs.hpp"
#include "dlsm/io.hpp"
#include "dlsm/synthetic.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSampler = 3;
constexpr int kExitMissing = 4;

struct CliError {
  int code;
  std::string message;
};

dlsm::KeyValueFile load_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw CliError{kExitMissing, "config not found: " + path};
  try {
    return dlsm::KeyValueFile::load(path);
  } catch (const std::exception& e) {
    throw CliError{kExitConfig, e.what()};
  }
}

void reject_unused(dlsm::KeyValueFile& kv) {
  const std::string key = kv.first_unused();
  if (!key.empty()) throw CliError{kExitConfig, "unknown config key '" + key + "'"};
}

int mode_dimension(const dlsm::ChainOutput& chain) {
  std::map<int, long> freq;
  for (int d : chain.d) ++freq[d];
  int best = 0;
  long best_count = -1;
  for (const auto& [d, count] : freq)
    if (count > best_count) {
      best = d;
      best_count = count;
    }
  return best;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override) {
  auto kv = load_config(config_path);
  dlsm::SyntheticSpec spec;
  std::uint64_t seed;
  try {
    spec = dlsm::parse_synthetic_spec(kv);
    seed = static_cast<std::uint64_t>(kv.get_long("seed", 1));
    reject_unused(kv);
    if (seed_override) seed = *seed_override;
    std::filesystem::create_directories(out_dir);
    const auto [data, truth] = dlsm::generate(spec, seed);
    dlsm::write_counts_csv(out_dir + "/counts.csv", data);
    dlsm::write_truth(out_dir + "/truth", truth);
    const double zero_share =
        (truth.w == 0).cast<double>().sum() / static_cast<double>(truth.w.size());
    std::cout << "wrote " << out_dir << "/counts.csv (" << data.N << " nodes, " << data.T
              << " times)\n";
    std::cout << "wrote " << out_dir << "/truth\n";
    std::cout << "realized structural-zero share = " << zero_share << "\n";
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError{kExitConfig, e.what()};
  }
  return kExitOk;
}

int cmd_fit(const std::string& data_path, const std::string& config_path,
            const std::string& out_dir, int n_chains, std::optional<std::uint64_t> seed_override) {
  if (!std::filesystem::exists(data_path))
    throw CliError{kExitMissing, "data not found: " + data_path};
  dlsm::NetworkSeries data;
  try {
    data = dlsm::read_counts_csv(data_path);
  } catch (const std::exception& e) {
    throw CliError{kExitConfig, e.what()};
  }

  auto kv = load_config(config_path);
  dlsm::ModelConfig cfg;
  try {
    cfg = dlsm::ModelConfig::from_kv(kv);
    reject_unused(kv);
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
  } catch (const std::exception& e) {
    throw CliError{kExitConfig, e.what()};
  }
  if (n_chains < 1) throw CliError{kExitConfig, "--chains must be at least 1"};

  // Refuse to overwrite finished chains fitted under a different config.
  std::filesystem::create_directories(out_dir);
  std::vector<int> todo;
  for (int c = 0; c < n_chains; ++c) {
    const std::string dir = out_dir + "/chain_" + std::to_string(c);
    if (std::filesystem::exists(dir + "/manifest.txt")) {
      auto mf = dlsm::read_manifest(dir);
      const std::string have = mf.get_string("config_hash", "");
      if (have != cfg.hash())
        throw CliError{kExitConfig, dir + ": existing chain has config hash " + have +
                                        ", current config hashes to " + cfg.hash() +
                                        "; refusing to overwrite"};
      std::cout << dir << ": already fitted under this config, skipping\n";
      continue;
    }
    todo.push_back(c);
  }

  std::vector<dlsm::ChainOutput> chains(static_cast<std::size_t>(n_chains));
  std::vector<std::string> errors(static_cast<std::size_t>(todo.size()));
  std::mutex io_mutex;
  dlsm::parallel_for(0, static_cast<int>(todo.size()), [&](int k) {
    const int c = todo[static_cast<std::size_t>(k)];
    dlsm::ModelConfig chain_cfg = cfg;
    if (c != 0) chain_cfg.progress_every = 0;  // progress trace from chain 0 only
    try {
      auto out = dlsm::run_chain(data, chain_cfg, c);
      dlsm::write_chain(out_dir + "/chain_" + std::to_string(c), out);
      std::lock_guard<std::mutex> lock(io_mutex);
      chains[static_cast<std::size_t>(c)] = std::move(out);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(io_mutex);
      errors[static_cast<std::size_t>(k)] = e.what();
    }
  });
  for (const auto& msg : errors)
    if (!msg.empty()) throw CliError{kExitSampler, "sampler failure: " + msg};

  bool any_truncated = false;
  for (int c : todo) {
    const auto& out = chains[static_cast<std::size_t>(c)];
    std::cout << "chain " << c << ": kept " << out.n_kept << " draws, d mode "
              << mode_dimension(out) << ", " << out.wall_seconds << " s\n";
    if (out.truncated) {
      any_truncated = true;
      std::cout << "chain " << c << ": truncated at iteration " << out.truncated_at
                << " in block '" << out.fail_block << "': " << out.fail_message << "\n";
    }
  }
  if (any_truncated) {
    std::cout << "partial chains flushed with truncation markers\n";
    return kExitSampler;
  }
  return kExitOk;
}

dlsm::ChainOutput load_chain_checked(const std::string& dir) {
  if (!std::filesystem::exists(dir + "/manifest.txt"))
    throw CliError{kExitMissing, dir + ": no manifest.txt (not a chain directory)"};
  dlsm::ChainOutput chain;
  try {
    chain = dlsm::load_chain(dir);
  } catch (const std::exception& e) {
    throw CliError{kExitConfig, e.what()};
  }
  if (chain.n_kept < 1)
    throw CliError{kExitMissing, dir + ": chain has no retained draws" +
                                     (chain.truncated ? " (truncated in block '" +
                                                            chain.fail_block + "')"
                                                      : "")};
  return chain;
}

// Draw-wise scalar summaries with mixing scores; NaN where the chain is too
// short for a stable window estimate.
void write_mixing_table(const std::string& path, const std::string& label,
                        const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  std::ofstream f(path);
  if (!f.good()) throw CliError{kExitConfig, "cannot write " + path};
  f << label << ",mean,ess,ess_per_draw,geweke_z,geweke_p\n";
  for (const auto& [name, s] : series) {
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    const auto ess = dlsm::effective_sample_size(s);
    f << name << "," << mean << "," << ess.ess << ","
      << ess.ess / static_cast<double>(s.size()) << ",";
    if (s.size() >= 200) {
      const auto g = dlsm::geweke_cd(s);
      if (g.degenerate) f << "nan,nan";
      else f << g.z << "," << g.p;
    } else {
      f << "nan,nan";
    }
    f << "\n";
  }
  if (!f.good()) throw CliError{kExitConfig, "write failed for " + path};
}

int cmd_diagnose(const std::string& chain_dir, std::string out_dir) {
  const auto chain = load_chain_checked(chain_dir);
  if (out_dir.empty()) out_dir = chain_dir;
  std::filesystem::create_directories(out_dir);
  if (chain.n_kept < 10)
    throw CliError{kExitMissing, chain_dir + ": need at least 10 retained draws to diagnose"};

  std::vector<std::pair<std::string, std::vector<double>>> alpha_rows;
  for (int i = 0; i < chain.N; ++i)
    alpha_rows.emplace_back("alpha_" + std::to_string(i + 1), dlsm::alpha_series(chain, i));
  write_mixing_table(out_dir + "/alpha_diagnostics.csv", "parameter", alpha_rows);
  std::cout << "wrote " << out_dir << "/alpha_diagnostics.csv\n";

  auto cfg_kv = dlsm::KeyValueFile::parse_text(chain.config_text);
  if (cfg_kv.get_bool("model.zero_inflated", true)) {
    std::vector<std::pair<std::string, std::vector<double>>> beta_rows;
    for (long c = 0; c < chain.beta.cols(); ++c) {
      std::vector<double> s(static_cast<std::size_t>(chain.n_kept));
      for (long h = 0; h < chain.n_kept; ++h) s[static_cast<std::size_t>(h)] = chain.beta(h, c);
      beta_rows.emplace_back("beta_" + std::to_string(c % chain.N + 1) + "_" +
                                 std::to_string(c / chain.N + 1),
                             s);
    }
    write_mixing_table(out_dir + "/beta_diagnostics.csv", "parameter", beta_rows);
    std::cout << "wrote " << out_dir << "/beta_diagnostics.csv\n";
  }

  bool uniform_d = true;
  for (const auto& st : chain.x)
    if (st.d != chain.x.front().d) uniform_d = false;
  if (chain.n_kept_x >= 10 && uniform_d) {
    std::vector<std::pair<std::string, std::vector<double>>> latent_rows;
    const int d = chain.x.front().d;
    for (int t = 0; t < chain.T; ++t)
      for (int i = 0; i < chain.N; ++i)
        for (int ell = 0; ell < d; ++ell)
          latent_rows.emplace_back("x_" + std::to_string(i + 1) + "_" + std::to_string(ell + 1) +
                                       "_t" + std::to_string(t + 1),
                                   dlsm::latent_series(chain, t, i, ell));
    write_mixing_table(out_dir + "/latent_diagnostics.csv", "coordinate", latent_rows);
    std::cout << "wrote " << out_dir << "/latent_diagnostics.csv\n";
  } else if (chain.n_kept_x > 0 && !uniform_d) {
    std::cerr << "latent dimension varies across stored draws; skipping latent table\n";
  }

  std::map<int, long> freq;
  for (int d : chain.d) ++freq[d];
  std::cout << "dimension posterior:";
  for (const auto& [d, count] : freq)
    std::cout << " d=" << d << ": " << static_cast<double>(count) / static_cast<double>(chain.n_kept);
  std::cout << "\n";
  return kExitOk;
}

int cmd_summarize(const std::string& chain_dir, std::string out_dir,
                  const std::string& truth_dir, const std::string& data_path) {
  const auto chain = load_chain_checked(chain_dir);
  if (out_dir.empty()) out_dir = chain_dir;
  std::filesystem::create_directories(out_dir);

  dlsm::export_draws_csv(out_dir + "/draws.csv", chain);
  std::cout << "wrote " << out_dir << "/draws.csv\n";

  if (chain.n_kept_x >= 1) {
    dlsm::export_trajectory_bands(out_dir + "/trajectory_bands.csv", chain);
    std::cout << "wrote " << out_dir << "/trajectory_bands.csv\n";

    const auto mean = dlsm::aligned_latent_mean(chain);
    std::ofstream f(out_dir + "/circular.csv");
    if (!f.good()) throw CliError{kExitConfig, "cannot write " + out_dir + "/circular.csv"};
    f << "node,t,dim,direction,magnitude\n";
    for (int t = 0; t < mean.t_len; ++t) {
      const auto proj =
          dlsm::circular_projection(mean.mean.middleRows(static_cast<long>(t) * mean.n, mean.n));
      for (int i = 0; i < mean.n; ++i)
        for (int ell = 0; ell < mean.d; ++ell)
          f << (i + 1) << "," << (t + 1) << "," << (ell + 1) << "," << proj.direction(i, ell)
            << "," << proj.magnitude[i] << "\n";
    }
    std::cout << "wrote " << out_dir << "/circular.csv\n";
  }

  if (chain.w.size() > 0) {
    Eigen::ArrayXXd prob;
    if (!data_path.empty()) {
      if (!std::filesystem::exists(data_path))
        throw CliError{kExitMissing, "data not found: " + data_path};
      prob = dlsm::structural_zero_map(chain, dlsm::read_counts_csv(data_path));
    } else {
      prob = dlsm::structural_zero_map(chain);
    }
    std::ofstream f(out_dir + "/structural_zeros.csv");
    if (!f.good())
      throw CliError{kExitConfig, "cannot write " + out_dir + "/structural_zeros.csv"};
    f << "i,j,t,probability\n";
    const auto dyads = dlsm::dyad_list(chain.N);
    for (int t = 0; t < chain.T; ++t)
      for (std::size_t k = 0; k < dyads.size(); ++k)
        f << (dyads[k].i + 1) << "," << (dyads[k].j + 1) << "," << (t + 1) << ","
          << prob(static_cast<long>(k), t) << "\n";
    std::cout << "wrote " << out_dir << "/structural_zeros.csv\n";
  }

  if (!truth_dir.empty()) {
    if (!std::filesystem::exists(truth_dir + "/manifest.txt"))
      throw CliError{kExitMissing, "truth not found: " + truth_dir};
    dlsm::TruthScore score;
    try {
      score = dlsm::score_against_truth(chain, dlsm::read_truth(truth_dir));
    } catch (const std::exception& e) {
      throw CliError{kExitConfig, e.what()};
    }
    std::ofstream f(out_dir + "/metrics.csv");
    if (!f.good()) throw CliError{kExitConfig, "cannot write " + out_dir + "/metrics.csv"};
    f << "f1,mcc,mse_alpha,mse_log_lambda,d_mode,procrustes_rmse\n";
    f << score.f1 << "," << score.mcc << "," << score.mse_alpha << "," << score.mse_log_lambda
      << "," << score.d_mode << "," << score.procrustes_rmse << "\n";
    if (!f.good()) throw CliError{kExitConfig, "write failed for " + out_dir + "/metrics.csv"};
    std::cout << "wrote " << out_dir << "/metrics.csv\n";
    std::cout << "f1 = " << score.f1 << ", mcc = " << score.mcc << ", mse_alpha = "
              << score.mse_alpha << ", d_mode = " << score.d_mode << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic latent-space network sampler"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir, chain_dir, truth_dir;
  std::uint64_t seed_value = 0;
  int n_chains = 1;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic count panel with ground truth");
  sim->add_option("--config", config_path, "flat key-value settings file")->required();
  sim->add_option("--out", out_dir, "output directory")->required();
  auto* sim_seed = sim->add_option("--seed", seed_value, "override the config seed");

  auto* fit = app.add_subcommand("fit", "run the Gibbs sampler on a count panel");
  fit->add_option("--data", data_path, "counts file (i,j,t,y)")->required();
  fit->add_option("--config", config_path, "flat key-value model config")->required();
  fit->add_option("--out", out_dir, "output directory (one chain_<k> subdirectory per chain)")
      ->required();
  fit->add_option("--chains", n_chains, "number of independent chains");
  auto* fit_seed = fit->add_option("--seed", seed_value, "override the config seed");

  auto* diag = app.add_subcommand("diagnose", "mixing diagnostics for a fitted chain");
  diag->add_option("--chain", chain_dir, "chain directory")->required();
  diag->add_option("--out", out_dir, "output directory (default: chain directory)");

  auto* summ = app.add_subcommand("summarize", "posterior summaries and plot-ready exports");
  summ->add_option("--chain", chain_dir, "chain directory")->required();
  summ->add_option("--out", out_dir, "output directory (default: chain directory)");
  summ->add_option("--score", truth_dir, "truth directory for recovery metrics");
  summ->add_option("--data", data_path, "counts file, forces zero-probability on observed edges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(config_path, out_dir,
                          sim_seed->count() > 0 ? std::optional<std::uint64_t>(seed_value)
                                                : std::nullopt);
    if (fit->parsed())
      return cmd_fit(data_path, config_path, out_dir, n_chains,
                     fit_seed->count() > 0 ? std::optional<std::uint64_t>(seed_value)
                                           : std::nullopt);
    if (diag->parsed()) return cmd_diagnose(chain_dir, out_dir);
    if (summ->parsed()) return cmd_summarize(chain_dir, out_dir, truth_dir, data_path);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
