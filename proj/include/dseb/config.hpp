#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dseb {

/// Flat key=value configuration with dotted section prefixes. '#' starts a
/// comment; blank lines are ignored. Unknown keys are kept (and snapshotted)
/// so configs stay diffable.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in) {
    Config cfg;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(line_number) +
                                 ": expected key=value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(line_number) +
                                 ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key,
                         const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("config key " + key + ": '" + it->second +
                               "' is not a number");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("config key " + key + ": '" + it->second +
                               "' is not an integer");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config key " + key + ": '" + v +
                             "' is not a boolean");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_doubles(it->second, key, ',');
  }

  std::vector<long long> get_int_list(const std::string& key,
                                      std::vector<long long> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<long long> out;
    for (double v : parse_doubles(it->second, key, ','))
      out.push_back(static_cast<long long>(v));
    return out;
  }

  /// "a:b:c;d:e:f" -> list of triples.
  std::vector<std::array<double, 3>> get_triple_list(
      const std::string& key,
      std::vector<std::array<double, 3>> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::array<double, 3>> out;
    std::stringstream ss(it->second);
    std::string group;
    while (std::getline(ss, group, ';')) {
      if (trim(group).empty()) continue;
      const std::vector<double> vals = parse_doubles(group, key, ':');
      if (vals.size() != 3)
        throw std::runtime_error("config key " + key +
                                 ": expected colon-separated triples");
      out.push_back({vals[0], vals[1], vals[2]});
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  /// Canonical snapshot text: sorted key=value lines.
  std::string snapshot() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
    return out.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<double> parse_doubles(const std::string& text,
                                           const std::string& key, char sep) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
      const std::string t = trim(item);
      if (t.empty()) continue;
      try {
        out.push_back(std::stod(t));
      } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": '" + t +
                                 "' is not a number");
      }
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace dseb
