#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/overlay/event_loop.hpp"
#include "lakegrid/overlay/peer.hpp"
#include "lakegrid/scheduler/core.hpp"
#include "lakegrid/scheduler/journal.hpp"
#include "lakegrid/scheduler/protocol.hpp"

namespace lakegrid::scheduler {

struct ServiceConfig {
  SchedulerConfig core;
  Millis tick{50};
  // Empty disables the journal.
  std::filesystem::path journal;
};

/// SchedulerCore driven over an overlay peer. All scheduling state lives on
/// one loop thread; overlay callbacks and API calls are posted to it.
class SchedulerService {
 public:
  using SettledHandler = std::function<void(const SchedulerCore::Settled&)>;

  struct Stats {
    std::size_t queue_depth = 0;
    std::size_t pending = 0;
    std::size_t workers_live = 0;
    std::uint64_t dispatched = 0;
    std::uint64_t results = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t stale = 0;
    std::uint64_t transfer_failures = 0;
  };

  // `peer` must outlive the service; the service installs its handlers.
  SchedulerService(overlay::Peer& peer, ServiceConfig config, EventLog* log = nullptr);
  ~SchedulerService();
  SchedulerService(const SchedulerService&) = delete;
  SchedulerService& operator=(const SchedulerService&) = delete;

  // Called on the scheduler thread; set before start().
  void set_settled_handler(SettledHandler h) { settled_handler_ = std::move(h); }

  // Requeues unfinished journal entries, then begins ticking.
  void start();
  void stop();

  // Throws Error(Conflict) for a duplicate job id.
  std::size_t submit(const JobId& job, SharedBytes archive, const std::filesystem::path& archive_path = {});
  void abort(const Uid& uid);

  Stats stats() const;
  std::vector<DispatchRecord> records(const JobId& job) const;
  std::vector<WorkerAd> workers() const;

 private:
  void on_message(const std::string& from, std::string payload);
  void process();
  void tick();

  overlay::Peer& peer_;
  ServiceConfig config_;
  EventLog* log_;
  SteadyClock clock_;
  SchedulerCore core_;
  std::unique_ptr<Journal> journal_;
  SettledHandler settled_handler_;
  Stats counters_;
  std::atomic<bool> running_{false};
  mutable overlay::EventLoop loop_;
};

}  // namespace lakegrid::scheduler
