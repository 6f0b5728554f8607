#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Key-value configuration with [section] headers.  Keys are addressed as
// "section.key".  Every key must be consumed by the run that parses it;
// leftovers are hard errors, so typos never silently fall back to defaults.

namespace rdgp {

class Config {
 public:
  static Config parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw std::runtime_error("config line " + std::to_string(lineno) +
                                   ": malformed section header");
        section = strip(s.substr(1, s.size() - 2));
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
      std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full))
        throw std::runtime_error("config line " + std::to_string(lineno) + ": duplicate key '" +
                                 full + "'");
      cfg.values_[full] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: missing required key '" + key + "'");
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    return parse_double(key, it->second);
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    return static_cast<int>(parse_long(key, it->second));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    return static_cast<std::uint64_t>(parse_long(key, it->second));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean: '" + v + "'");
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ','))
      out.push_back(static_cast<int>(parse_long(key, strip(tok))));
    if (out.empty()) throw std::runtime_error("config: key '" + key + "' is an empty list");
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // every present key must have been consumed by now
  void ensure_all_consumed() const {
    std::string unknown;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw std::runtime_error("config: unknown keys: " + unknown);
  }

  // canonical emission, grouped by section
  std::string echo() const {
    std::map<std::string, std::map<std::string, std::string>> bysec;
    for (const auto& [k, v] : values_) {
      auto dot = k.find('.');
      if (dot == std::string::npos)
        bysec[""][k] = v;
      else
        bysec[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
    std::string out;
    for (const auto& [sec, kv] : bysec) {
      if (!sec.empty()) out += "[" + sec + "]\n";
      for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
      out += "\n";
    }
    return out;
  }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }
  static double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d;
    try {
      d = std::stod(v, &pos);
    } catch (...) {
      throw std::runtime_error("config: key '" + key + "' is not a number: '" + v + "'");
    }
    if (pos != v.size())
      throw std::runtime_error("config: key '" + key + "' has trailing characters: '" + v + "'");
    return d;
  }
  static long long parse_long(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long d;
    try {
      d = std::stoll(v, &pos);
    } catch (...) {
      throw std::runtime_error("config: key '" + key + "' is not an integer: '" + v + "'");
    }
    if (pos != v.size())
      throw std::runtime_error("config: key '" + key + "' has trailing characters: '" + v + "'");
    return d;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace rdgp
