#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lakegrid {

/// Flat `key = value` document, the format used for configuration files,
/// parameter files and experiment descriptions. Lines starting with '#' are
/// comments. Typed getters throw Error(InvalidSpec) naming the offending key.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text);
  std::string format() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void erase(const std::string& key) { values_.erase(key); }

  const std::string& get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  std::string get_or(const std::string& key, std::string fallback) const;

  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list_or(const std::string& key,
                                       std::vector<std::string> fallback) const;

  const std::map<std::string, std::string>& items() const { return values_; }
  bool operator==(const KeyValues&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Strict numeric parsing; the whole string must be consumed.
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

}  // namespace lakegrid
