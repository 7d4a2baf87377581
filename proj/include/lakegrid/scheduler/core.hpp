#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/domain/uid.hpp"

namespace lakegrid::scheduler {

struct WorkerAd {
  std::string worker_id;
  std::uint32_t total_slots = 0;
  std::uint32_t free_slots = 0;
  std::uint64_t memory_mb = 0;
  Millis last_heartbeat{0};
  std::string speed_hint;
  // Changes whenever the agent restarts.
  std::uint64_t incarnation = 0;
};

enum class Outcome { Pending, Success, Failure, Lost };
std::string_view to_string(Outcome o);

struct DispatchRecord {
  std::string job_id;
  std::string worker_id;
  std::uint32_t attempt = 1;
  Millis dispatched_at{0};
  Outcome outcome = Outcome::Pending;
  std::string reason;
};

struct SchedulerConfig {
  Millis heartbeat_period{2000};
  int missed_beats = 3;
  int max_retries = 3;
  Millis wall_limit{0};  // 0 disables the per-job limit

  Millis liveness_window() const { return heartbeat_period * missed_beats; }
};

/// Scheduling state: FIFO job queue, worker ads, dispatch records. Pure and
/// single-threaded; time comes from the Clock and side effects are returned
/// to the caller, who performs the I/O.
class SchedulerCore {
 public:
  struct Assignment {
    JobId job;
    std::string worker_id;
    std::uint32_t attempt = 1;
  };
  struct AbortOrder {
    JobId job;
    std::string worker_id;
  };
  // A job that reached a final state. Failed jobs carry the last reason.
  struct Settled {
    JobId job;
    bool success = false;
    SharedBytes result;
    std::string reason;
  };
  enum class Disposition { Accepted, Duplicate, Unknown, Aborted };

  SchedulerCore(SchedulerConfig config, const Clock& clock, EventLog* log = nullptr);

  // Returns the 0-based queue position. Throws Error(Conflict) for a job id
  // seen before.
  std::size_t enqueue(const JobId& job, SharedBytes archive);
  // ADVERTISE and HEARTBEAT. A new incarnation of a known worker loses
  // whatever the old one was running.
  void advertise(WorkerAd ad);
  std::vector<Assignment> matchmake();
  // The archive could not be handed to the worker.
  void dispatch_failed(const JobId& job, const std::string& reason);
  Disposition complete(const JobId& job, const std::string& worker_id, SharedBytes result);
  void worker_lost(const std::string& worker_id, const std::string& reason);
  // Heartbeat lapses and wall-clock limits.
  void tick();
  void abort(const Uid& uid);

  std::vector<AbortOrder> take_aborts();
  std::vector<Settled> take_settled();

  SharedBytes archive(const JobId& job) const;
  std::size_t queue_length() const { return queue_.size(); }
  std::optional<std::size_t> queue_position(const JobId& job) const;
  std::vector<JobId> queued() const;
  std::size_t pending_count() const;
  std::size_t pending_on(const std::string& worker_id) const;
  std::vector<DispatchRecord> records(const JobId& job) const;
  std::vector<WorkerAd> workers() const;
  std::size_t live_workers() const;
  bool finished(const JobId& job) const;
  std::uint64_t duplicate_results() const { return duplicates_; }
  const SchedulerConfig& config() const { return config_; }

 private:
  struct Job {
    JobId id;
    std::uint64_t seq = 0;
    SharedBytes archive;
    std::vector<DispatchRecord> records;
    bool settled = false;
    bool aborted = false;
  };

  bool fresh(const WorkerAd& ad) const;
  DispatchRecord* pending_record(Job& j);
  // Marks the pending attempt with `outcome` and requeues or gives up.
  void end_attempt(Job& j, Outcome outcome, const std::string& reason);
  void log(const std::string& kind, const std::string& detail);

  SchedulerConfig config_;
  const Clock& clock_;
  EventLog* log_;
  std::uint64_t next_seq_ = 0;
  std::map<std::string, Job> jobs_;
  std::map<std::uint64_t, std::string> queue_;  // seq -> job id
  std::map<std::string, WorkerAd> workers_;
  std::map<std::string, std::set<std::string>> running_;  // worker -> job ids
  std::set<Uid> aborted_;
  std::vector<AbortOrder> aborts_;
  std::vector<Settled> settled_;
  std::uint64_t duplicates_ = 0;
};

}  // namespace lakegrid::scheduler
