// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Plain-text key=value files. '#' starts a comment; blank lines are ignored.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdg::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + t + "'");
      const std::string key = detail::trim(std::string_view(t).substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
      kv.values_[key] = detail::trim(std::string_view(t).substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    return parse(f, path.string());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + path.string());
    write(f);
    if (!f) throw ConfigError("write failed for " + path.string());
  }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  template <class N>
    requires std::is_arithmetic_v<N>
  void set(const std::string& key, N value) {
    if constexpr (std::is_floating_point_v<N>) {
      std::ostringstream os;
      os.precision(17);
      os << value;
      values_[key] = os.str();
    } else {
      values_[key] = std::to_string(value);
    }
  }
  template <class N>
  void set(const std::string& key, const std::vector<N>& list) {
    std::string s;
    for (std::size_t i = 0; i < list.size(); ++i) s += (i ? "," : "") + std::to_string(list[i]);
    values_[key] = s;
  }

  /// "auto" when unset.
  template <class N>
  void set_optional(const std::string& key, const std::optional<N>& value) {
    if (value)
      set(key, *value);
    else
      values_[key] = "auto";
  }

  /// Overlays `other` on this set; later keys win.
  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class N>
  N get(const std::string& key, N fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : convert<N>(key, it->second);
  }

  template <class N>
  std::optional<N> get_optional(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty() || it->second == "auto") return std::nullopt;
    return convert<N>(key, it->second);
  }

  template <class N>
  std::vector<N> get_list(const std::string& key, std::vector<N> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<N> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(convert<N>(key, detail::trim(item)));
    return out;
  }

  /// Throws on any key outside `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  template <class N>
  static N convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<N, bool>) {
      if (text == "true" || text == "1" || text == "on") return true;
      if (text == "false" || text == "0" || text == "off") return false;
      throw ConfigError("key '" + key + "': expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<N, std::string>) {
      return text;
    } else {
      N v{};
      const char* end = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end)
        throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
      return v;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mdg::config
