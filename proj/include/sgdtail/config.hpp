#pragma once

// Sectioned key = value configuration files:
//
//   # comment
//   [data]
//   d = 10
//   eta = 0.1
//   [sweep]
//   b = 1, 2, 5
//
// Keys outside the known schema are rejected, with the offending line number.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sgdtail::config {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& msg)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Entry {
  std::string value;
  int line = 0;
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Known sections and their keys.
inline const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"data",
       {"d", "b", "eta", "sigma", "sigma_x", "sigma_y", "seed", "input", "input_param",
        "mixture_weights", "mixture_scales", "standardize"}},
      {"sgd", {"K", "K0", "replicas", "mode", "n", "sampling", "overflow_threshold"}},
      {"theory", {"samples", "tol"}},
      {"sweep", {"eta", "b", "d", "sigma"}},
      {"estimator", {"k1_grid", "min_k2", "flatten"}},
  };
  return s;
}

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in) {
    ConfigFile cfg;
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto hash = raw.find_first_of("#;");
      const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        if (!schema().contains(section))
          throw ConfigError(line_no, "unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(line_no, "expected 'key = value'");
      if (section.empty()) throw ConfigError(line_no, "key outside of any section");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      if (key.empty()) throw ConfigError(line_no, "empty key");
      if (!schema().at(section).contains(key))
        throw ConfigError(line_no, "unknown key '" + key + "' in [" + section + "]");
      auto& slot = cfg.sections_[section];
      if (slot.contains(key))
        throw ConfigError(line_no, "duplicate key '" + key + "' in [" + section + "]");
      slot[key] = {trim(std::string_view(line).substr(eq + 1)), line_no};
    }
    return cfg;
  }

  const Entry* find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  const std::map<std::string, std::map<std::string, Entry>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

template <class T>
T parse_number(const Entry& e, const std::string& key) {
  T out{};
  const auto* first = e.value.data();
  const auto* last = first + e.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError(e.line, "invalid value '" + e.value + "' for '" + key + "'");
  return out;
}

template <class T>
std::vector<T> parse_list(const Entry& e, const std::string& key) {
  std::vector<T> out;
  std::size_t start = 0;
  const std::string& v = e.value;
  if (trim(v).empty()) throw ConfigError(e.line, "empty list for '" + key + "'");
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto piece = trim(std::string_view(v).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start));
    if (piece.empty()) throw ConfigError(e.line, "empty element in list '" + key + "'");
    out.push_back(parse_number<T>(Entry{piece, e.line}, key));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_bool(const Entry& e, const std::string& key) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(e.line, "invalid boolean '" + e.value + "' for '" + key + "'");
}

}  // namespace sgdtail::config
