#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sgte/error.hpp"

namespace sgte {

/// Flat `key = value` store used for nuisance and scenario configs.
///
/// Lines starting with `#` are comments. Vectors are comma separated.
/// Doubles are written with 17 significant digits so that a
/// write/read cycle reproduces every value bit for bit.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = trim(text.substr(pos, end - pos));
      ++line_no;
      pos = end + 1;
      if (line.empty() || line.front() == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw Error(Errc::Schema, "config line " + std::to_string(line_no) + ": expected key = value");
      }
      cfg.values_[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Schema, "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(Errc::Schema, "missing config key '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double get_double(const std::string& key) const { return parse_double(get(key), key); }
  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw Error(Errc::Schema, "config key '" + key + "': not an integer: " + v);
    }
    return out;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(Errc::Schema, "config key '" + key + "': not a boolean: " + v);
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split(get(key))) out.push_back(parse_double(item, key));
    return out;
  }

  std::vector<std::size_t> get_indices(const std::string& key) const {
    std::vector<std::size_t> out;
    for (double v : get_doubles(key)) out.push_back(static_cast<std::size_t>(v));
    return out;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, double value) { values_[key] = format_double(value); }
  void set(const std::string& key, long long value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  template <class T>
  void set_list(const std::string& key, const std::vector<T>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out += ",";
      if constexpr (std::is_floating_point_v<T>) {
        out += format_double(items[i]);
      } else if constexpr (std::is_convertible_v<T, std::string>) {
        out += items[i];
      } else {
        out += std::to_string(items[i]);
      }
    }
    values_[key] = out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, p);
  }

  static std::vector<std::string> split(std::string_view s, char sep = ',') {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t pos = 0;
    while (true) {
      std::size_t end = s.find(sep, pos);
      out.emplace_back(trim(s.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos)));
      if (end == std::string_view::npos) break;
      pos = end + 1;
    }
    return out;
  }

  static std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const std::size_t b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const std::size_t e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& v, const std::string& key) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw Error(Errc::Schema, "config key '" + key + "': not a number: " + v);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sgte
