#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/harness/topology.hpp"

namespace lakegrid::harness {

struct ReplayOptions {
  std::filesystem::path root;  // scratch space; a temp dir when empty
  Millis heartbeat{250};
  Millis timeout{std::chrono::minutes(10)};  // per batch
  int baseline_rows = 24;
  bool compress = true;
};

struct BatchReport {
  std::uint64_t sims = 0;
  bool valid = false;  // reached COMPLETED
  std::string state;
  double makespan_ms = 0;  // submit request to COMPLETED observed
  double speedup_fast = 0;
  double speedup_slow = 0;
  double service_response_ms = 0;
  double input_processing_ms = 0;
  std::map<std::string, std::uint64_t> sims_per_worker;
  std::map<std::string, double> utilization;
};

struct ReplayReport {
  TopologySpec topology;
  std::vector<BatchReport> batches;

  bool valid() const;
  // key=value document, one block of keys per batch.
  std::string to_text() const;
  // One row per batch, fixed columns first and then one per worker.
  std::string to_csv() const;
};

/// Runs each batch end to end (client -> gateway -> scheduler -> workers)
/// on a fresh in-process cluster, as a linear AirTemp sweep.
ReplayReport replay_evaluation(const TopologySpec& topology, const std::vector<std::uint64_t>& batches,
                               const ReplayOptions& options = {});

}  // namespace lakegrid::harness
