#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace lakegrid {

/// Experiment identifier: 40 lowercase hex characters (160 bits).
class Uid {
 public:
  static constexpr std::size_t kLength = 40;

  // Draws 20 bytes from the secure entropy source.
  static Uid generate();
  // Throws Error(Validation) unless `text` satisfies the Uid invariants.
  static Uid parse(std::string_view text);
  static bool is_valid(std::string_view text);

  const std::string& str() const { return value_; }

  auto operator<=>(const Uid&) const = default;

 private:
  explicit Uid(std::string v) : value_(std::move(v)) {}
  std::string value_;
};

/// "{uid}.{ordinal}" with the ordinal zero-padded so job artifacts sort
/// lexically in group order.
struct JobId {
  Uid uid;
  std::uint32_t ordinal = 0;

  std::string str() const;
  static JobId parse(std::string_view text);

  auto operator<=>(const JobId&) const = default;
};

}  // namespace lakegrid

template <>
struct std::hash<lakegrid::Uid> {
  std::size_t operator()(const lakegrid::Uid& u) const noexcept {
    return std::hash<std::string>{}(u.str());
  }
};
