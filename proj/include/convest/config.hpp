#pragma once

// Key-value configuration files with [section] headers, '#'/';' comments,
// and typed accessors that name the offending field in errors.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "convest/core.hpp"

namespace convest {

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(m) {}
};

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& is) {
    ConfigFile cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw ConfigError("config line " + std::to_string(lineno) +
                            ": unterminated section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      }
      cfg.values_[section + "." + key] = value;
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse(is);
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = std::nullopt) const {
    const auto it = values_.find(section + "." + key);
    if (it != values_.end()) return it->second;
    if (fallback) return *fallback;
    throw ConfigError("missing config value " + section + "." + key);
  }

  double get_double(const std::string& section, const std::string& key,
                    std::optional<double> fallback = std::nullopt) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config value " + section + "." + key);
    }
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config value " + section + "." + key + " = '" + it->second +
                        "' is not a number");
    }
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::optional<std::int64_t> fallback = std::nullopt) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError("missing config value " + section + "." + key);
    }
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config value " + section + "." + key + " = '" + it->second +
                        "' is not an integer");
    }
  }

  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    std::optional<std::string> fallback = std::nullopt) const {
    const std::string raw = get_string(section, key, fallback);
    std::vector<std::string> out;
    std::istringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace convest
