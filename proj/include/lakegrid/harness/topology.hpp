#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/overlay/nat.hpp"

namespace lakegrid::harness {

struct WorkerSpec {
  std::string id;
  std::uint32_t slots = 1;
  std::int64_t duration_ms = 1;  // emulated time per simulation
  overlay::NatClass nat = overlay::NatClass::Open;
};

/// A cluster layout, read from a key=value file:
///
///   workers = site_a,site_b
///   site_a.slots = 16
///   site_a.duration_ms = 6
///   site_a.nat = FULL_CONE
///   scheduler.nat = OPEN
///   relay = true
///   group_size = 10
struct TopologySpec {
  std::vector<WorkerSpec> workers;
  overlay::NatClass scheduler_nat = overlay::NatClass::Open;
  bool relay = true;
  std::uint32_t group_size = 10;

  // Throws Error(Validation).
  void validate() const;
  std::int64_t fastest_ms() const;
  std::int64_t slowest_ms() const;
  std::uint32_t total_slots() const;
  TopologySpec with_slots(std::uint32_t slots_per_worker) const;

  std::string to_text() const;
  static TopologySpec parse(std::string_view text);
};

}  // namespace lakegrid::harness
