#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/gemt/gemt.hpp"
#include "lakegrid/overlay/peer.hpp"

namespace lakegrid::worker {

struct WorkerConfig {
  std::uint32_t slots = 1;
  std::uint64_t memory_mb = 1024;
  std::filesystem::path scratch_root;
  std::string scheduler_id = "scheduler";
  Millis heartbeat_period{2000};
  Millis reconnect_backoff{200};
  std::string speed_hint;
  // Per-simulation emulated compute time, overriding the parameter files.
  std::optional<std::int64_t> emulate_ms;
  bool compress_results = true;

  // Throws Error(Validation).
  void validate() const;
  // Keys: slots, memory_mb, scratch_root, scheduler, heartbeat_ms,
  // speed_hint, emulate_ms.
  static WorkerConfig from_kv(const KeyValues& kv);
};

/// Execute-node agent. A supervisor thread keeps the link to the scheduler,
/// advertises and heartbeats; one thread per slot runs jobs through
/// gemt::run_job in its own scratch directory. Results are written to an
/// outbox atomically and only then sent.
class WorkerAgent {
 public:
  struct Stats {
    std::uint64_t jobs_received = 0;
    std::uint64_t jobs_completed = 0;
    std::uint64_t jobs_aborted = 0;
    std::uint64_t results_sent = 0;
    std::uint32_t running = 0;
    std::uint32_t max_running = 0;
  };

  // `peer` must be started and outlive the agent.
  WorkerAgent(overlay::Peer& peer, WorkerConfig config, EventLog* log = nullptr);
  WorkerAgent(overlay::Peer& peer, WorkerConfig config, gemt::ModelRunner runner, EventLog* log = nullptr);
  ~WorkerAgent();
  WorkerAgent(const WorkerAgent&) = delete;
  WorkerAgent& operator=(const WorkerAgent&) = delete;

  // Wipes the scratch root and starts the threads. Throws Error(Validation)
  // for a bad configuration.
  void start();
  // Finishes nothing: running jobs are cancelled and unsent results are
  // discarded, as after a crash.
  void kill();
  void stop() { kill(); }

  const std::string& worker_id() const { return peer_.peer_id(); }
  std::uint64_t incarnation() const { return incarnation_; }
  Stats stats() const;
  bool linked() const { return linked_; }

 private:
  struct Pending {
    std::string job_id;
    std::string archive;
  };
  struct Running {
    std::shared_ptr<std::atomic<bool>> cancel;
  };

  void on_message(const std::string& from, std::string payload);
  void supervise();
  void slot_loop(std::uint32_t index);
  void send_ad(bool first);
  void flush_outbox();
  std::filesystem::path outbox_dir() const { return config_.scratch_root / "outbox"; }

  overlay::Peer& peer_;
  WorkerConfig config_;
  gemt::ModelRunner runner_;
  EventLog* log_;
  std::uint64_t incarnation_ = 0;

  mutable std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable sup_cv_;
  std::deque<Pending> queue_;
  std::map<std::string, Running> running_;
  std::deque<std::string> outbox_;  // job ids whose result file is ready
  Stats stats_;
  bool stopping_ = false;
  std::atomic<bool> linked_{false};
  bool link_changed_ = false;

  std::thread supervisor_;
  std::vector<std::thread> slots_;
};

}  // namespace lakegrid::worker
