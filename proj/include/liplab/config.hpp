#pragma once

// Flat `key = value` run configuration.

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/imagio.hpp"

namespace liplab {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig cfg;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
      const auto end = text.find('\n', start);
      std::string line = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
      start = end == std::string::npos ? text.size() + 1 : end + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      const std::string where = origin + ":" + std::to_string(line_no);
      if (eq == std::string::npos) throw UsageError("expected key = value at " + where);
      const std::string key = trim(trimmed.substr(0, eq)), value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw UsageError("empty key at " + where);
      if (cfg.values_.count(key)) throw UsageError("duplicate key '" + key + "' at " + where);
      cfg.values_[key] = value;
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    const auto bytes = liplab::detail::read_file(path);
    return parse(std::string(bytes.begin(), bytes.end()), path);
  }

  /// Throws UsageError on the first key not in `allowed`.
  void require_known(const std::set<std::string>& allowed) const {
    for (const auto& k : order_) {
      if (!allowed.count(k)) throw UsageError("unknown config key '" + k + "'");
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("missing config key '" + key + "'");
    return it->second;
  }
  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? liplab::detail::parse_double(raw(key), "config key '" + key + "'") : fallback;
  }
  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = raw(key);
    long long v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw UsageError("config key '" + key + "' is not an integer");
    return v;
  }
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& f : liplab::detail::split_csv(raw(key))) {
      int v = 0;
      auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || end != f.data() + f.size()) throw UsageError("config key '" + key + "' has a bad entry");
      out.push_back(v);
    }
    return out;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

/// "HxW" -> {H, W}.
inline std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw UsageError("size must look like HxW, got '" + s + "'");
  int h = 0, w = 0;
  auto r1 = std::from_chars(s.data(), s.data() + x, h);
  auto r2 = std::from_chars(s.data() + x + 1, s.data() + s.size(), w);
  if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != s.data() + x || r2.ptr != s.data() + s.size() ||
      h <= 0 || w <= 0) {
    throw UsageError("size must look like HxW, got '" + s + "'");
  }
  return {h, w};
}

}  // namespace liplab
