#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlsm/common.hpp"

namespace dlsm {

// Flat `key = value` text with '#' comments; preserves insertion order and
// tracks consumed keys so unknown keys can be rejected.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse_text(const std::string& text) {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        require(trim(line).empty(), "config line " + std::to_string(lineno) + ": expected key = value");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
      require(kv.index_.find(key) == kv.index_.end(), "config: duplicate key '" + key + "'");
      kv.index_[key] = kv.entries_.size();
      kv.entries_.push_back({key, val, false});
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  bool has(const std::string& key) const { return index_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    auto it = index_.find(key);
    if (it == index_.end()) return dflt;
    entries_[it->second].used = true;
    return entries_[it->second].value;
  }

  double get_double(const std::string& key, double dflt) {
    auto it = index_.find(key);
    if (it == index_.end()) return dflt;
    entries_[it->second].used = true;
    return parse_double(key, entries_[it->second].value);
  }

  long get_long(const std::string& key, long dflt) {
    auto it = index_.find(key);
    if (it == index_.end()) return dflt;
    entries_[it->second].used = true;
    const std::string& v = entries_[it->second].value;
    try {
      std::size_t pos = 0;
      long out = std::stol(v, &pos);
      require(pos == v.size(), "config key '" + key + "': not an integer: '" + v + "'");
      return out;
    } catch (const failure&) {
      throw;
    } catch (...) {
      fail("config key '" + key + "': not an integer: '" + v + "'");
    }
  }

  bool get_bool(const std::string& key, bool dflt) {
    auto it = index_.find(key);
    if (it == index_.end()) return dflt;
    entries_[it->second].used = true;
    const std::string v = entries_[it->second].value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config key '" + key + "': not a boolean: '" + v + "'");
  }

  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& dflt) {
    auto it = index_.find(key);
    if (it == index_.end()) return dflt;
    entries_[it->second].used = true;
    std::vector<double> out;
    std::istringstream ss(entries_[it->second].value);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_double(key, trim(tok)));
    return out;
  }

  // First key never read by any get_*; empty when all consumed.
  std::string first_unused() const {
    for (const auto& e : entries_)
      if (!e.used) return e.key;
    return "";
  }

 private:
  struct Entry {
    std::string key, value;
    bool used;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double out = std::stod(v, &pos);
      require(pos == v.size(), "config key '" + key + "': not a number: '" + v + "'");
      return out;
    } catch (const failure&) {
      throw;
    } catch (...) {
      fail("config key '" + key + "': not a number: '" + v + "'");
    }
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

enum class DimensionMode { Fixed, Random };
enum class Parametrization { NodeWise, FeatureWise };
enum class UpsilonStructure { Full, Diagonal, GraphicalHorseshoe };
enum class PhiStructure { Full, Diagonal };
enum class InactivePolicy { Carry, Refresh };
enum class LaplacePenalty { Full, StatesOnly };

struct PriorConfig {
  double sigma_alpha2 = 5.0;
  double sigma_beta2 = 5.0;
  double x0_mean = 0.0;
  double x0_var = 1.0;
  double phi_mean = 0.0;
  double phi_var = 1.0;
  double iw_nu = 0.0;  // 0: defaults to d + 2 at runtime
  double iw_scale = 1.0;
  double ig_a = 2.0;
  double ig_b = 1.0;
  double expansion_g = 1.0;
  double expansion_a = 3.0;
  double expansion_b = 3.0;
  std::vector<double> d_weights;  // empty: uniform over 1..d_max
};

struct ModelConfig {
  bool zero_inflated = true;
  bool dynamic = true;
  DimensionMode dimension_mode = DimensionMode::Fixed;
  int d = 2;
  int d_max = 4;
  Parametrization parametrization = Parametrization::NodeWise;
  UpsilonStructure upsilon = UpsilonStructure::Full;
  PhiStructure phi = PhiStructure::Full;
  PriorConfig prior;
  long n_iter = 1000;
  long burn_in = 0;
  long thin = 1;
  std::uint64_t seed = 1;
  bool store_x = true;
  long x_thin = 1;
  bool random_scan = false;
  long progress_every = 500;
  InactivePolicy inactive = InactivePolicy::Carry;
  LaplacePenalty penalty = LaplacePenalty::Full;
  bool ghs_main_text_exponent = false;

  int max_dimension() const { return dimension_mode == DimensionMode::Random ? d_max : d; }

  void validate() const {
    require(d >= 1, "config: d must be >= 1");
    require(d_max >= 1, "config: d_max must be >= 1");
    require(n_iter > burn_in && burn_in >= 0, "config: need n_iter > burn_in >= 0");
    require(thin >= 1 && x_thin >= 1, "config: thinning must be >= 1");
    require(upsilon != UpsilonStructure::GraphicalHorseshoe ||
                parametrization == Parametrization::FeatureWise,
            "config: graphical horseshoe requires the feature-wise parametrization");
    require(prior.sigma_alpha2 > 0 && prior.sigma_beta2 > 0 && prior.x0_var > 0 &&
                prior.phi_var > 0 && prior.iw_scale > 0 && prior.ig_a > 0 && prior.ig_b > 0 &&
                prior.expansion_g > 0 && prior.expansion_a > 0 && prior.expansion_b > 0,
            "config: prior scales must be positive");
    if (!prior.d_weights.empty()) {
      require(static_cast<int>(prior.d_weights.size()) == d_max,
              "config: prior.d_weights must have d_max entries");
      double s = 0.0;
      for (double w : prior.d_weights) {
        require(w >= 0.0, "config: prior.d_weights must be nonnegative");
        s += w;
      }
      require(std::fabs(s - 1.0) < 1e-8, "config: prior.d_weights must sum to 1");
    }
  }

  static ModelConfig from_kv(KeyValueFile& kv) {
    ModelConfig c;
    c.zero_inflated = kv.get_bool("model.zero_inflated", c.zero_inflated);
    c.dynamic = kv.get_bool("model.dynamic", c.dynamic);
    const std::string dm = kv.get_string("model.dimension_mode", "fixed");
    if (dm == "fixed") c.dimension_mode = DimensionMode::Fixed;
    else if (dm == "random") c.dimension_mode = DimensionMode::Random;
    else fail("config key 'model.dimension_mode': unknown value '" + dm + "'");
    c.d = static_cast<int>(kv.get_long("model.d", c.d));
    c.d_max = static_cast<int>(kv.get_long("model.d_max", c.d_max));
    const std::string par = kv.get_string("model.parametrization", "nodewise");
    if (par == "nodewise") c.parametrization = Parametrization::NodeWise;
    else if (par == "featurewise") c.parametrization = Parametrization::FeatureWise;
    else fail("config key 'model.parametrization': unknown value '" + par + "'");
    const std::string ups = kv.get_string("model.upsilon", "full");
    if (ups == "full") c.upsilon = UpsilonStructure::Full;
    else if (ups == "diagonal") c.upsilon = UpsilonStructure::Diagonal;
    else if (ups == "horseshoe") c.upsilon = UpsilonStructure::GraphicalHorseshoe;
    else fail("config key 'model.upsilon': unknown value '" + ups + "'");
    const std::string ph = kv.get_string("model.phi", "full");
    if (ph == "full") c.phi = PhiStructure::Full;
    else if (ph == "diagonal") c.phi = PhiStructure::Diagonal;
    else fail("config key 'model.phi': unknown value '" + ph + "'");

    c.prior.sigma_alpha2 = kv.get_double("prior.sigma_alpha2", c.prior.sigma_alpha2);
    c.prior.sigma_beta2 = kv.get_double("prior.sigma_beta2", c.prior.sigma_beta2);
    c.prior.x0_mean = kv.get_double("prior.x0_mean", c.prior.x0_mean);
    c.prior.x0_var = kv.get_double("prior.x0_var", c.prior.x0_var);
    c.prior.phi_mean = kv.get_double("prior.phi_mean", c.prior.phi_mean);
    c.prior.phi_var = kv.get_double("prior.phi_var", c.prior.phi_var);
    c.prior.iw_nu = kv.get_double("prior.iw_nu", c.prior.iw_nu);
    c.prior.iw_scale = kv.get_double("prior.iw_scale", c.prior.iw_scale);
    c.prior.ig_a = kv.get_double("prior.ig_a", c.prior.ig_a);
    c.prior.ig_b = kv.get_double("prior.ig_b", c.prior.ig_b);
    c.prior.expansion_g = kv.get_double("prior.expansion_g", c.prior.expansion_g);
    c.prior.expansion_a = kv.get_double("prior.expansion_a", c.prior.expansion_a);
    c.prior.expansion_b = kv.get_double("prior.expansion_b", c.prior.expansion_b);
    c.prior.d_weights = kv.get_double_list("prior.d_weights", c.prior.d_weights);

    c.n_iter = kv.get_long("mcmc.n_iter", c.n_iter);
    c.burn_in = kv.get_long("mcmc.burn_in", c.burn_in);
    c.thin = kv.get_long("mcmc.thin", c.thin);
    c.store_x = kv.get_bool("mcmc.store_x", c.store_x);
    c.x_thin = kv.get_long("mcmc.x_thin", c.x_thin);
    c.random_scan = kv.get_bool("mcmc.random_scan", c.random_scan);
    c.progress_every = kv.get_long("mcmc.progress_every", c.progress_every);
    c.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(c.seed)));

    const std::string pen = kv.get_string("dimension.penalty", "full");
    if (pen == "full") c.penalty = LaplacePenalty::Full;
    else if (pen == "states_only") c.penalty = LaplacePenalty::StatesOnly;
    else fail("config key 'dimension.penalty': unknown value '" + pen + "'");
    const std::string ina = kv.get_string("dimension.inactive", "carry");
    if (ina == "carry") c.inactive = InactivePolicy::Carry;
    else if (ina == "refresh") c.inactive = InactivePolicy::Refresh;
    else fail("config key 'dimension.inactive': unknown value '" + ina + "'");
    c.ghs_main_text_exponent = kv.get_bool("ghs.main_text_exponent", c.ghs_main_text_exponent);

    c.validate();
    return c;
  }

  std::string serialize() const {
    std::ostringstream out;
    out.precision(17);
    out << "model.zero_inflated = " << (zero_inflated ? "true" : "false") << "\n";
    out << "model.dynamic = " << (dynamic ? "true" : "false") << "\n";
    out << "model.dimension_mode = " << (dimension_mode == DimensionMode::Fixed ? "fixed" : "random") << "\n";
    out << "model.d = " << d << "\n";
    out << "model.d_max = " << d_max << "\n";
    out << "model.parametrization = "
        << (parametrization == Parametrization::NodeWise ? "nodewise" : "featurewise") << "\n";
    out << "model.upsilon = "
        << (upsilon == UpsilonStructure::Full ? "full"
                                              : upsilon == UpsilonStructure::Diagonal ? "diagonal" : "horseshoe")
        << "\n";
    out << "model.phi = " << (phi == PhiStructure::Full ? "full" : "diagonal") << "\n";
    out << "prior.sigma_alpha2 = " << prior.sigma_alpha2 << "\n";
    out << "prior.sigma_beta2 = " << prior.sigma_beta2 << "\n";
    out << "prior.x0_mean = " << prior.x0_mean << "\n";
    out << "prior.x0_var = " << prior.x0_var << "\n";
    out << "prior.phi_mean = " << prior.phi_mean << "\n";
    out << "prior.phi_var = " << prior.phi_var << "\n";
    out << "prior.iw_nu = " << prior.iw_nu << "\n";
    out << "prior.iw_scale = " << prior.iw_scale << "\n";
    out << "prior.ig_a = " << prior.ig_a << "\n";
    out << "prior.ig_b = " << prior.ig_b << "\n";
    out << "prior.expansion_g = " << prior.expansion_g << "\n";
    out << "prior.expansion_a = " << prior.expansion_a << "\n";
    out << "prior.expansion_b = " << prior.expansion_b << "\n";
    if (!prior.d_weights.empty()) {
      out << "prior.d_weights = ";
      for (std::size_t k = 0; k < prior.d_weights.size(); ++k)
        out << (k ? "," : "") << prior.d_weights[k];
      out << "\n";
    }
    out << "mcmc.n_iter = " << n_iter << "\n";
    out << "mcmc.burn_in = " << burn_in << "\n";
    out << "mcmc.thin = " << thin << "\n";
    out << "mcmc.store_x = " << (store_x ? "true" : "false") << "\n";
    out << "mcmc.x_thin = " << x_thin << "\n";
    out << "mcmc.random_scan = " << (random_scan ? "true" : "false") << "\n";
    out << "mcmc.progress_every = " << progress_every << "\n";
    out << "dimension.penalty = " << (penalty == LaplacePenalty::Full ? "full" : "states_only") << "\n";
    out << "dimension.inactive = " << (inactive == InactivePolicy::Carry ? "carry" : "refresh") << "\n";
    out << "ghs.main_text_exponent = " << (ghs_main_text_exponent ? "true" : "false") << "\n";
    out << "seed = " << seed << "\n";
    return out.str();
  }

  // FNV-1a over the canonical serialization; stable across runs.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : serialize()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }
};

}  // namespace dlsm
