#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/domain/uid.hpp"

namespace lakegrid {

enum class ExperimentState { Submitted, Generating, Running, Completed, Failed, Aborted };

std::string_view to_string(ExperimentState s);
ExperimentState parse_experiment_state(std::string_view s);
bool is_terminal(ExperimentState s);
bool can_transition(ExperimentState from, ExperimentState to);

enum class GenerationKind { VerbatimUpload, LinearSweep, DistributionSample };

std::string_view to_string(GenerationKind k);
GenerationKind parse_generation_kind(std::string_view s);

// How the experiment's simulations are derived. `params` holds the sweep
// description in its flat wire form (empty for verbatim uploads).
struct GenerationSpec {
  GenerationKind kind = GenerationKind::VerbatimUpload;
  KeyValues params;

  bool operator==(const GenerationSpec&) const = default;
};

struct ExperimentMetrics {
  double service_response = 0;   // ms, request receipt to UID reply
  double input_processing = 0;   // ms, generate + compress all inputs
  std::uint64_t jobs_total = 0;
  std::uint64_t jobs_done = 0;
  std::uint64_t jobs_failed = 0;

  bool operator==(const ExperimentMetrics&) const = default;
};

struct ExperimentRecord {
  explicit ExperimentRecord(Uid id) : uid(std::move(id)) {}

  Uid uid;
  ExperimentState state = ExperimentState::Submitted;
  GenerationSpec spec;
  WallTime created_at{};
  std::vector<JobId> job_ids;
  ExperimentMetrics metrics;
  std::string workdir;
  std::uint64_t sim_count = 0;
  std::string failure_reason;

  double completion_fraction() const;
  bool operator==(const ExperimentRecord&) const = default;
};

using PersistHook = std::function<void(const ExperimentRecord&)>;

/// Returns a copy of `record` moved to `next`. Throws Error(Contract) naming
/// both states when the edge is not in the transition graph.
ExperimentRecord transition(const ExperimentRecord& record, ExperimentState next,
                            const PersistHook& persist = {});

std::string to_meta(const ExperimentRecord& record);
ExperimentRecord record_from_meta(std::string_view text);

enum class Operation { Add, Subtract, Multiply, Divide };

std::string_view to_string(Operation op);
Operation parse_operation(std::string_view s);

struct Provenance {
  bool verbatim = true;
  std::string variable;
  Operation operation = Operation::Add;
  double offset = 0;

  std::string describe() const;
  bool operator==(const Provenance&) const = default;
};

/// One model run. File names ending in ".nml" are parameter files and
/// ".csv" files are drivers; a valid spec has exactly one of the former and
/// at least one of the latter.
struct SimulationSpec {
  std::uint64_t sim_id = 0;
  std::map<std::string, SharedBytes> input_files;
  Provenance provenance;

  std::string parameter_file() const;
  std::vector<std::string> driver_files() const;
  void validate() const;
};

bool is_parameter_file(std::string_view name);
bool is_driver_file(std::string_view name);

enum class JobStatus { Queued, Dispatched, Done, Failed };

std::string_view to_string(JobStatus s);

struct JobBundle {
  JobId job_id;
  std::vector<std::uint64_t> sim_ids;
  std::string archive;
  JobStatus status = JobStatus::Queued;
};

}  // namespace lakegrid
