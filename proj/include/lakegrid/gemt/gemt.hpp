#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lakegrid/common/event_log.hpp"
#include "lakegrid/domain/experiment.hpp"
#include "lakegrid/domain/uid.hpp"
#include "lakegrid/gemt/archive.hpp"

namespace lakegrid::gemt {

inline constexpr std::string_view kToolchainVersion = "lakegrid-gemt/1";
inline constexpr std::string_view kManifestFile = "manifest.meta";
inline constexpr std::string_view kJobMetaFile = "job.meta";
inline constexpr std::string_view kSummaryFile = "summary.meta";
inline constexpr std::string_view kStatusFile = "status";
inline constexpr std::string_view kLostReason = "lost";

/// Toolchain settings, read from a key=value file. Keys: group_size,
/// compress, pipeline_packaging, feature_filter (comma list),
/// max_archive_bytes.
struct GemtConfig {
  std::uint32_t group_size = 10;
  bool compress = true;
  bool pipeline_packaging = true;
  std::vector<std::string> feature_filter;
  std::uint64_t max_archive_bytes = 256ull << 20;

  void validate() const;
  std::string to_text() const;
  static GemtConfig parse(std::string_view text);
  ArchiveOptions archive_options() const { return {compress, max_archive_bytes}; }
};

struct ManifestEntry {
  std::uint64_t sim_id = 0;
  std::string dir;
  std::vector<std::string> inputs;
  std::vector<std::string> expected_outputs;

  bool operator==(const ManifestEntry&) const = default;
};

struct JobManifest {
  std::string job_id;
  std::string toolchain_version{kToolchainVersion};
  std::vector<ManifestEntry> sims;

  void validate() const;
  std::string to_meta() const;
  static JobManifest parse(std::string_view text);

  bool operator==(const JobManifest&) const = default;
};

// Index ranges [j*k, min(M,(j+1)*k)) for each bundle j.
std::vector<std::vector<std::size_t>> partition(std::size_t sim_count, std::uint32_t group_size);

// Archive holding every member's inputs under "{sim_id}/" plus the manifest.
std::string package(const std::string& job_id, std::span<const SimulationSpec> members,
                    const GemtConfig& cfg);

JobBundle make_bundle(const JobId& id, std::span<const SimulationSpec> members, const GemtConfig& cfg);

std::vector<JobBundle> group(const Uid& uid, std::span<const SimulationSpec> sims, const GemtConfig& cfg);

/// Packages bundles in order and hands each to `sink`. With
/// pipeline_packaging a bundle is delivered as soon as it is packaged;
/// otherwise all bundles are packaged before the first is delivered.
/// Each packaged bundle is recorded in `log` as "bundle_packaged".
void group_streaming(const Uid& uid, std::span<const SimulationSpec> sims, const GemtConfig& cfg,
                     const std::function<void(JobBundle&&)>& sink, EventLog* log = nullptr);

struct UnpackedJob {
  JobManifest manifest;
  std::map<std::uint64_t, std::map<std::string, std::string>> inputs;
};

// Throws Error(Input) for a corrupt archive or missing/invalid manifest.
UnpackedJob unpack_job(std::string archive);

/// Runs one simulation whose inputs are in `sim_dir`, leaving its outputs there.
using ModelRunner = std::function<void(const std::filesystem::path& sim_dir)>;

// Reads the single *.nml parameter file and the driver it names, runs the
// lake model and writes lake_output.csv.
ModelRunner lake_model_runner(std::optional<std::int64_t> emulate_ms_override = std::nullopt);

struct SimOutcome {
  std::uint64_t sim_id = 0;
  bool ok = false;
  std::string reason;
  std::map<std::string, std::string> outputs;

  bool operator==(const SimOutcome&) const = default;
};

struct JobResult {
  std::string job_id;
  bool job_ok = false;
  std::string job_error;
  std::vector<SimOutcome> sims;

  bool operator==(const JobResult&) const = default;
};

/// Executes every member sequentially in "{scratch_root}/{job_id}/{sim_id}/".
/// The job directory is wiped before and after. A member failure is recorded
/// and does not stop its siblings; an unreadable archive fails the whole job.
/// Setting `cancel` stops before the next member.
JobResult run_job(const std::string& job_id, std::string archive, const ModelRunner& runner,
                  const std::filesystem::path& scratch_root,
                  const std::atomic<bool>* cancel = nullptr);

// "{job_id}.out": job.meta plus "{sim_id}/status" and the sim's outputs.
std::string result_archive(const JobResult& result, bool compress = true);
JobResult parse_result_archive(std::string archive);
std::string result_archive_name(const std::string& job_id);

struct FailedSim {
  std::uint64_t sim_id = 0;
  std::string reason;

  bool operator==(const FailedSim&) const = default;
};

struct CollateSummary {
  std::uint64_t total = 0;
  std::uint64_t succeeded = 0;
  std::uint64_t failed = 0;
};

struct CollatedResults {
  explicit CollatedResults(Uid id) : uid(std::move(id)) {}

  Uid uid;
  std::map<std::uint64_t, std::map<std::string, std::string>> outputs;
  std::vector<FailedSim> failed_sims;
  CollateSummary summary;
  std::vector<std::string> feature_filter;  // columns already applied to outputs
};

struct JobOutcome {
  std::string job_id;
  std::vector<std::uint64_t> sim_ids;
  std::optional<std::string> result_archive;  // nullopt: archive missing
  std::string failure_reason;                  // used when the archive is missing
};

CollatedResults collate(const Uid& uid, std::span<const JobOutcome> jobs, const GemtConfig& cfg);

// "{sim_id}/{file}" per successful sim plus summary.meta.
std::string results_archive(const CollatedResults& results, bool compress = true);

struct ResultFilter {
  std::optional<std::set<std::uint64_t>> sims;
  std::vector<std::string> columns;
};

// Subset of a collated results archive. Unknown sim ids are ignored; an
// unknown column raises Error(Validation).
std::string filter_results(std::string results_archive, const ResultFilter& filter,
                           bool compress = true);

}  // namespace lakegrid::gemt
