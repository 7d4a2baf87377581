#include "lakegrid/common/kv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "lakegrid/common/error.hpp"

namespace lakegrid {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  // from_chars rejects a leading '+', accept it for hand-written files.
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorKind::Internal, "number formatting failed");
  return std::string(buf, ptr);
}

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (const auto& raw_line : split(text, '\n')) {
    ++line_no;
    auto line = trim(raw_line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidSpec,
                  "line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) {
      throw Error(ErrorKind::InvalidSpec, "line " + std::to_string(line_no) + ": empty key");
    }
    if (kv.has(key)) throw Error(ErrorKind::InvalidSpec, "duplicate key '" + key + "'");
    kv.values_[key] = value;
  }
  return kv;
}

std::string KeyValues::format() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  return out.str();
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::InvalidSpec, "missing field '" + key + "'");
  return it->second;
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, std::string fallback) const {
  auto v = find(key);
  return v ? *v : std::move(fallback);
}

double KeyValues::get_double(const std::string& key) const {
  auto v = parse_double(get(key));
  if (!v) throw Error(ErrorKind::InvalidSpec, "field '" + key + "' is not a number");
  return *v;
}

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key) const {
  auto v = parse_int(get(key));
  if (!v) throw Error(ErrorKind::InvalidSpec, "field '" + key + "' is not an integer");
  return *v;
}

std::int64_t KeyValues::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValues::get_uint(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::InvalidSpec, "field '" + key + "' is not an unsigned integer");
  }
  return v;
}

bool KeyValues::get_bool_or(const std::string& key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw Error(ErrorKind::InvalidSpec, "field '" + key + "' is not a boolean");
}

std::vector<std::string> KeyValues::get_list_or(const std::string& key,
                                                std::vector<std::string> fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  for (const auto& item : split(*v, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace lakegrid
