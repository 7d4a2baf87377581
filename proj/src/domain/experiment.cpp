#include "lakegrid/domain/experiment.hpp"

#include <cctype>

#include <nlohmann/json.hpp>

#include "lakegrid/common/error.hpp"

namespace lakegrid {

using nlohmann::json;

std::string_view to_string(ExperimentState s) {
  switch (s) {
    case ExperimentState::Submitted: return "SUBMITTED";
    case ExperimentState::Generating: return "GENERATING";
    case ExperimentState::Running: return "RUNNING";
    case ExperimentState::Completed: return "COMPLETED";
    case ExperimentState::Failed: return "FAILED";
    case ExperimentState::Aborted: return "ABORTED";
  }
  return "UNKNOWN";
}

ExperimentState parse_experiment_state(std::string_view s) {
  for (auto st : {ExperimentState::Submitted, ExperimentState::Generating, ExperimentState::Running,
                  ExperimentState::Completed, ExperimentState::Failed, ExperimentState::Aborted}) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorKind::Input, "unknown experiment state '" + std::string(s) + "'");
}

bool is_terminal(ExperimentState s) {
  return s == ExperimentState::Completed || s == ExperimentState::Failed ||
         s == ExperimentState::Aborted;
}

bool can_transition(ExperimentState from, ExperimentState to) {
  using S = ExperimentState;
  switch (from) {
    case S::Submitted:
      return to == S::Generating || to == S::Failed || to == S::Aborted;
    case S::Generating:
      return to == S::Running || to == S::Failed || to == S::Aborted;
    case S::Running:
      return to == S::Completed || to == S::Failed || to == S::Aborted;
    default:
      return false;
  }
}

ExperimentRecord transition(const ExperimentRecord& record, ExperimentState next,
                            const PersistHook& persist) {
  if (is_terminal(record.state)) {
    throw Error(ErrorKind::Contract, "illegal transition " + std::string(to_string(record.state)) +
                                         " -> " + std::string(to_string(next)) +
                                         ": terminal state");
  }
  if (!can_transition(record.state, next)) {
    throw Error(ErrorKind::Contract, "illegal transition " + std::string(to_string(record.state)) +
                                         " -> " + std::string(to_string(next)));
  }
  if (next == ExperimentState::Running && record.job_ids.empty()) {
    throw Error(ErrorKind::Contract, "cannot enter RUNNING without jobs");
  }
  ExperimentRecord out = record;
  out.state = next;
  if (persist) persist(out);
  return out;
}

double ExperimentRecord::completion_fraction() const {
  if (state == ExperimentState::Completed) return 1.0;
  if (metrics.jobs_total == 0) return 0.0;
  return static_cast<double>(metrics.jobs_done) / static_cast<double>(metrics.jobs_total);
}

std::string_view to_string(GenerationKind k) {
  switch (k) {
    case GenerationKind::VerbatimUpload: return "verbatim-upload";
    case GenerationKind::LinearSweep: return "linear-sweep";
    case GenerationKind::DistributionSample: return "distribution-sample";
  }
  return "unknown";
}

GenerationKind parse_generation_kind(std::string_view s) {
  for (auto k : {GenerationKind::VerbatimUpload, GenerationKind::LinearSweep,
                 GenerationKind::DistributionSample}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::Input, "unknown generation kind '" + std::string(s) + "'");
}

std::string to_meta(const ExperimentRecord& r) {
  json j;
  j["uid"] = r.uid.str();
  j["state"] = std::string(to_string(r.state));
  j["spec"] = {{"kind", std::string(to_string(r.spec.kind))}, {"params", r.spec.params.items()}};
  j["created_at"] = to_rfc3339(r.created_at);
  auto ids = json::array();
  for (const auto& id : r.job_ids) ids.push_back(id.str());
  j["job_ids"] = std::move(ids);
  j["metrics"] = {{"service_response", r.metrics.service_response},
                  {"input_processing", r.metrics.input_processing},
                  {"jobs_total", r.metrics.jobs_total},
                  {"jobs_done", r.metrics.jobs_done},
                  {"jobs_failed", r.metrics.jobs_failed}};
  j["workdir"] = r.workdir;
  j["sim_count"] = r.sim_count;
  j["failure_reason"] = r.failure_reason;
  return j.dump(2) + "\n";
}

ExperimentRecord record_from_meta(std::string_view text) {
  try {
    auto j = json::parse(text);
    ExperimentRecord r{Uid::parse(j.at("uid").get<std::string>())};
    r.state = parse_experiment_state(j.at("state").get<std::string>());
    r.spec.kind = parse_generation_kind(j.at("spec").at("kind").get<std::string>());
    for (auto& [k, v] : j.at("spec").at("params").items()) r.spec.params.set(k, v.get<std::string>());
    r.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
    for (const auto& id : j.at("job_ids")) r.job_ids.push_back(JobId::parse(id.get<std::string>()));
    const auto& m = j.at("metrics");
    r.metrics.service_response = m.at("service_response").get<double>();
    r.metrics.input_processing = m.at("input_processing").get<double>();
    r.metrics.jobs_total = m.at("jobs_total").get<std::uint64_t>();
    r.metrics.jobs_done = m.at("jobs_done").get<std::uint64_t>();
    r.metrics.jobs_failed = m.at("jobs_failed").get<std::uint64_t>();
    r.workdir = j.at("workdir").get<std::string>();
    r.sim_count = j.value("sim_count", std::uint64_t{0});
    r.failure_reason = j.value("failure_reason", std::string{});
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("corrupt record.meta: ") + e.what());
  }
}

std::string_view to_string(Operation op) {
  switch (op) {
    case Operation::Add: return "add";
    case Operation::Subtract: return "subtract";
    case Operation::Multiply: return "multiply";
    case Operation::Divide: return "divide";
  }
  return "unknown";
}

Operation parse_operation(std::string_view s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (auto op : {Operation::Add, Operation::Subtract, Operation::Multiply, Operation::Divide}) {
    if (to_string(op) == lower) return op;
  }
  throw Error(ErrorKind::InvalidSpec, "field 'operation': unknown operation '" + std::string(s) + "'");
}

std::string Provenance::describe() const {
  if (verbatim) return "verbatim";
  return variable + " " + std::string(to_string(operation)) + " " + format_double(offset);
}

namespace {
bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
}  // namespace

bool is_parameter_file(std::string_view name) { return ends_with(name, ".nml"); }
bool is_driver_file(std::string_view name) { return ends_with(name, ".csv"); }

std::string SimulationSpec::parameter_file() const {
  for (const auto& [name, _] : input_files) {
    if (is_parameter_file(name)) return name;
  }
  throw Error(ErrorKind::Validation, "simulation " + std::to_string(sim_id) + " has no parameter file");
}

std::vector<std::string> SimulationSpec::driver_files() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : input_files) {
    if (is_driver_file(name)) out.push_back(name);
  }
  return out;
}

void SimulationSpec::validate() const {
  std::size_t params = 0;
  std::size_t drivers = 0;
  for (const auto& [name, data] : input_files) {
    if (!data) throw Error(ErrorKind::Validation, "empty payload for " + name);
    if (is_parameter_file(name)) ++params;
    if (is_driver_file(name)) ++drivers;
  }
  if (params != 1) {
    throw Error(ErrorKind::Validation, "simulation " + std::to_string(sim_id) +
                                           " must contain exactly one parameter (.nml) file, found " +
                                           std::to_string(params));
  }
  if (drivers == 0) {
    throw Error(ErrorKind::Validation,
                "simulation " + std::to_string(sim_id) + " has no driver (.csv) file");
  }
}

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "QUEUED";
    case JobStatus::Dispatched: return "DISPATCHED";
    case JobStatus::Done: return "DONE";
    case JobStatus::Failed: return "FAILED";
  }
  return "UNKNOWN";
}

}  // namespace lakegrid
