#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/harness/topology.hpp"

namespace lakegrid::harness {

enum class FaultKind { WorkerKill, FrameTamper, ArchiveLoss };
std::string_view to_string(FaultKind k);
FaultKind parse_fault_kind(std::string_view s);

struct VirtualFault {
  FaultKind kind = FaultKind::WorkerKill;
  std::string target;  // worker id
  Millis at{0};
};

struct VirtualOptions {
  TopologySpec topology;
  std::uint64_t sims = 0;
  Millis heartbeat{2000};
  Millis dispatch_latency{1};
  // Per-simulation durations vary by up to this fraction either way.
  double jitter = 0.0;
  std::uint64_t seed = 1;
  std::vector<VirtualFault> faults;
  Millis horizon{std::chrono::hours(24)};
};

struct VirtualRun {
  bool valid = false;  // every job settled successfully before the horizon
  Millis makespan{0};
  std::uint64_t jobs = 0;
  std::uint64_t lost_attempts = 0;
  std::uint64_t duplicates = 0;
  std::map<std::string, std::uint64_t> sims_per_worker;
  std::map<std::string, double> utilization;
  std::string event_log;
};

/// Discrete-event run of the real scheduling core against modelled
/// workers, in virtual time. Same options give the same event log.
VirtualRun run_virtual(const VirtualOptions& options);

}  // namespace lakegrid::harness
