#pragma once

// Flat `key = value` run configuration. Lines may carry `#` comments; string
// values may be double-quoted; lists are comma separated, optionally inside
// brackets (`seeds = [0, 1, 2]`).

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spdcov/dataset.hpp"
#include "spdcov/error.hpp"

namespace spdcov {

class RunConfig {
 public:
  RunConfig() = default;

  /// Rejects keys outside `allowed` and repeated keys.
  static RunConfig parse(std::istream& in, const std::set<std::string>& allowed,
                         const std::string& context = "config") {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = context + ":" + std::to_string(lineno);
      line = strip_comment(line);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty()) throw UsageError(where + ": empty key");
      if (!allowed.count(key)) throw UsageError(where + ": unknown key '" + key + "'");
      if (cfg.values_.count(key)) throw UsageError(where + ": key '" + key + "' given twice");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path, const std::set<std::string>& allowed) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    return parse(in, allowed, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const { return values_.at(key); }

  double get_double(const std::string& key) const {
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw UsageError("config key '" + key + "': '" + v + "' is not a number");
  }

  long get_int(const std::string& key) const { return parse_int(key, values_.at(key)); }

  std::vector<long> get_int_list(const std::string& key) const {
    std::string v = values_.at(key);
    if (!v.empty() && v.front() == '[') {
      if (v.back() != ']') throw UsageError("config key '" + key + "': unterminated list");
      v = v.substr(1, v.size() - 2);
    }
    std::vector<long> out;
    for (const auto& item : detail::split_csv_line(v))
      if (!item.empty()) out.push_back(parse_int(key, item));
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  static long parse_int(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const long n = std::stol(v, &used);
      if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    throw UsageError("config key '" + key + "': '" + v + "' is not an integer");
  }

  std::map<std::string, std::string> values_;
};

/// Parses "16,8" or "16x8" style integer lists given on the command line.
inline std::vector<int> parse_dims(const std::string& text) {
  std::vector<int> out;
  std::string cur;
  auto flush = [&] {
    const std::string t = detail::trim(cur);
    cur.clear();
    if (t.empty()) return;
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("'" + text + "' is not a list of integers");
    }
  };
  for (char c : text) {
    if (c == ',' || c == 'x' || c == '[' || c == ']') flush();
    else cur.push_back(c);
  }
  flush();
  return out;
}

}  // namespace spdcov
