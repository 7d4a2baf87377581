#include "lakegrid/harness/replay.hpp"

#include <unistd.h>

#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/harness/cluster.hpp"
#include "lakegrid/model/lake_model.hpp"

namespace lakegrid::harness {

namespace fs = std::filesystem;

namespace {

void write_baseline(const fs::path& dir, int rows) {
  fs::create_directories(dir);
  write_file(dir / "lake.nml", model::LakeParams{}.to_text());
  std::string csv = "time,AirTemp,Wind\n";
  for (int i = 0; i < rows; ++i) csv += std::to_string(i) + "," + std::to_string(10 + i % 7) + ",3\n";
  write_file(dir / "met_hourly.csv", csv);
}

BatchReport run_batch(const TopologySpec& topology, std::uint64_t n, const ReplayOptions& o, const fs::path& root) {
  ClusterOptions co;
  co.topology = topology;
  co.root = root / "cluster";
  co.heartbeat = o.heartbeat;
  co.compress = o.compress;
  Cluster cluster(co);
  cluster.start();
  write_baseline(root / "baseline", o.baseline_rows);

  BatchReport b;
  b.sims = n;
  auto session = cluster.session();
  const auto started = std::chrono::steady_clock::now();
  const auto uid = session.run_sweep(root / "baseline", "met_hourly.csv", "AirTemp", -10, 30, static_cast<std::int64_t>(n));
  client::StatusInfo s;
  for (;;) {
    s = session.check_completion(uid);
    if (s.terminal() || std::chrono::steady_clock::now() - started > o.timeout) break;
    std::this_thread::sleep_for(Millis{10});
  }
  b.makespan_ms = elapsed_ms(started);
  b.state = s.state;
  b.valid = s.state == "COMPLETED";
  b.speedup_fast = static_cast<double>(n) * static_cast<double>(topology.fastest_ms()) / b.makespan_ms;
  b.speedup_slow = static_cast<double>(n) * static_cast<double>(topology.slowest_ms()) / b.makespan_ms;
  b.service_response_ms = s.metrics.get_double_or("service_response_ms", 0);
  b.input_processing_ms = s.metrics.get_double_or("input_processing_ms", 0);

  // Allocation: which worker produced each accepted result.
  const auto record = cluster.gateway().store().load(uid);
  std::map<std::string, std::uint64_t> job_sims;
  const auto index = cluster.gateway().store().jobs_dir(uid) / "index.json";
  if (fs::exists(index)) {
    const auto parsed = nlohmann::json::parse(read_file(index));
    for (auto& [job, sims] : parsed.items()) job_sims[job] = sims.size();
  }
  for (const auto& w : topology.workers) b.sims_per_worker[w.id] = 0;
  for (const auto& job : record.job_ids) {
    for (const auto& r : cluster.scheduler().records(job)) {
      if (r.outcome == scheduler::Outcome::Success) b.sims_per_worker[r.worker_id] += job_sims[job.str()];
    }
  }
  for (const auto& w : topology.workers) {
    const double capacity = static_cast<double>(w.slots) * b.makespan_ms;
    b.utilization[w.id] = static_cast<double>(b.sims_per_worker[w.id] * w.duration_ms) / capacity;
  }
  cluster.stop();
  return b;
}

}  // namespace

bool ReplayReport::valid() const {
  for (const auto& b : batches) {
    if (!b.valid) return false;
  }
  return !batches.empty();
}

std::string ReplayReport::to_text() const {
  std::ostringstream out;
  out << "workers = " << topology.workers.size() << "\n";
  out << "total_slots = " << topology.total_slots() << "\n";
  out << "fast_ms = " << topology.fastest_ms() << "\n";
  out << "slow_ms = " << topology.slowest_ms() << "\n";
  out << "valid = " << (valid() ? "true" : "false") << "\n";
  for (const auto& b : batches) {
    const auto p = "batch." + std::to_string(b.sims) + ".";
    out << p << "state = " << b.state << "\n";
    out << p << "makespan_ms = " << format_double(b.makespan_ms) << "\n";
    out << p << "speedup_fast = " << format_double(b.speedup_fast) << "\n";
    out << p << "speedup_slow = " << format_double(b.speedup_slow) << "\n";
    out << p << "service_response_ms = " << format_double(b.service_response_ms) << "\n";
    out << p << "input_processing_ms = " << format_double(b.input_processing_ms) << "\n";
    for (const auto& [w, n] : b.sims_per_worker) out << p << "sims." << w << " = " << n << "\n";
    for (const auto& [w, u] : b.utilization) out << p << "utilization." << w << " = " << format_double(u) << "\n";
  }
  return out.str();
}

std::string ReplayReport::to_csv() const {
  std::ostringstream out;
  out << "sims,state,makespan_ms,speedup_fast,speedup_slow,service_response_ms,input_processing_ms";
  for (const auto& w : topology.workers) out << ",sims_" << w.id << ",utilization_" << w.id;
  out << "\n";
  for (const auto& b : batches) {
    out << b.sims << "," << b.state << "," << format_double(b.makespan_ms) << "," << format_double(b.speedup_fast)
        << "," << format_double(b.speedup_slow) << "," << format_double(b.service_response_ms) << ","
        << format_double(b.input_processing_ms);
    for (const auto& w : topology.workers) {
      auto n = b.sims_per_worker.find(w.id);
      auto u = b.utilization.find(w.id);
      out << "," << (n == b.sims_per_worker.end() ? 0 : n->second) << ","
          << format_double(u == b.utilization.end() ? 0.0 : u->second);
    }
    out << "\n";
  }
  return out.str();
}

ReplayReport replay_evaluation(const TopologySpec& topology, const std::vector<std::uint64_t>& batches,
                               const ReplayOptions& options) {
  topology.validate();
  if (batches.empty()) throw Error(ErrorKind::Harness, "no batch sizes given");
  auto root = options.root.empty() ? fs::temp_directory_path() / ("lakegrid_replay_" + std::to_string(::getpid()))
                                   : options.root;
  ReplayReport report;
  report.topology = topology;
  for (auto n : batches) {
    if (n == 0) throw Error(ErrorKind::Harness, "batch size must be >= 1");
    report.batches.push_back(run_batch(topology, n, options, root / std::to_string(n)));
    fs::remove_all(root / std::to_string(n));
  }
  if (options.root.empty()) fs::remove_all(root);
  return report;
}

}  // namespace lakegrid::harness
