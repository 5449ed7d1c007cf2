#pragma once

// Flat key = value configuration files.
//
//   # comment
//   preset = bigsoldb
//   data_path = data/bigsoldb.csv
//   shots = 10, 15, 20
//
// Keys are case-sensitive; a `preset` key seeds defaults that explicit keys
// override regardless of their position in the file.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lamel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}
}  // namespace detail

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is) {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = detail::trim(std::string_view(body).substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = detail::trim(std::string_view(body).substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set_default(const std::string& key, std::string value) { values_.emplace(key, std::move(value)); }
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback = {}) const {
    return get(key).value_or(fallback);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return to_int(key, *v);
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return to_double(key, *v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::string s = *v;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + ": expected a boolean, got '" + *v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto v = get(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<long long> get_int_list(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& s : get_list(key)) out.push_back(to_int(key, s));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
    return out;
  }

  /// Canonical `key = value` dump, sorted by key.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static long long to_int(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected an integer, got '" + s + "'");
    }
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected a number, got '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

/// Dataset presets. Column names follow the public releases and can be
/// overridden key by key.
inline std::map<std::string, std::string> preset_defaults(const std::string& name) {
  if (name == "boobier")
    return {{"layout", "long"},         {"smiles_col", "SMILES"},       {"task_col", "solvent"},
            {"value_col", "LogS"},      {"task_smiles_col", ""},        {"temperature_col", ""},
            {"temperature_filter", "false"}, {"min_rows_per_task", "1"}, {"max_size", "5"}};
  if (name == "bigsoldb")
    return {{"layout", "long"},
            {"smiles_col", "SMILES_Solute"},
            {"task_col", "Solvent"},
            {"value_col", "LogS(mol/L)"},
            {"task_smiles_col", "SMILES_Solvent"},
            {"temperature_col", "Temperature_K"},
            {"temperature_filter", "true"},
            {"min_rows_per_task", "200"},
            {"max_size", "5"}};
  if (name == "qm9multixc")
    return {{"layout", "wide"},        {"smiles_col", "smiles"}, {"value_col_pattern", "*"},
            {"exclude_cols", "index,id,mol_id,gdb_idx,name"}, {"min_rows_per_task", "1"},
            {"max_size", "5"}};
  if (name == "synthetic")
    return {{"synthetic.dim", "50"},  {"synthetic.tasks", "8"},       {"synthetic.rank", "2"},
            {"synthetic.noise", "0.1"}, {"synthetic.rows", "1000"},   {"synthetic.seed", "0"},
            {"synthetic.target", "none"}, {"synthetic.target_rows", "1000"}};
  throw ConfigError("unknown dataset preset '" + name + "'");
}

inline Config apply_preset(Config cfg) {
  if (auto preset = cfg.get("preset")) {
    for (auto& [k, v] : preset_defaults(*preset)) cfg.set_default(k, v);
  }
  return cfg;
}

}  // namespace lamel
