#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/gemt/gemt.hpp"
#include "lakegrid/gws/store.hpp"
#include "lakegrid/scheduler/service.hpp"

namespace httplib {
class Server;
}

namespace lakegrid::gws {

/// Where packaged jobs go. Implementations must tolerate a job id being
/// submitted twice (after a gateway restart) by ignoring the repeat.
class JobSink {
 public:
  virtual ~JobSink() = default;
  virtual void submit(const JobId& job, SharedBytes archive, const std::filesystem::path& archive_path) = 0;
  virtual void abort(const Uid& uid) = 0;
  virtual std::size_t queue_depth() const = 0;
  virtual std::size_t workers_live() const = 0;
};

class SchedulerSink final : public JobSink {
 public:
  explicit SchedulerSink(scheduler::SchedulerService& service) : service_(service) {}

  void submit(const JobId& job, SharedBytes archive, const std::filesystem::path& archive_path) override;
  void abort(const Uid& uid) override { service_.abort(uid); }
  std::size_t queue_depth() const override { return service_.stats().queue_depth; }
  std::size_t workers_live() const override { return service_.stats().workers_live; }

 private:
  scheduler::SchedulerService& service_;
};

/// Persists settled jobs into the experiment store and queues collation
/// once every job of a running experiment has settled. It only touches the
/// store, so it keeps working while no gateway is up.
class ResultRecorder {
 public:
  explicit ResultRecorder(std::filesystem::path data_root, EventLog* log = nullptr);

  void on_settled(const scheduler::SchedulerCore::Settled& s);
  // The job settled but its result archive never arrived; its simulations
  // are reported lost at collation.
  void record_missing(const JobId& job, const std::string& reason);

 private:
  ExperimentStore store_;
  TaskQueue tasks_;
  EventLog* log_;
  SteadyClock clock_;
};

struct GatewayConfig {
  std::filesystem::path data_root;
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::size_t task_workers = 2;
  std::uint64_t max_upload_bytes = 256ull << 20;
  gemt::GemtConfig gemt;
  Millis task_poll{50};
  // Called on the task thread before each task runs.
  std::function<void(const Uid&, TaskKind)> before_task;
};

/// REST front end. Requests are answered from the on-disk store; the work
/// behind a submission runs later on a task pool draining the store's
/// durable queue, so a restarted gateway resumes where the last one
/// stopped.
class Gateway {
 public:
  Gateway(GatewayConfig config, JobSink& sink, EventLog* log = nullptr);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void start();
  // Stops serving and abandons in-flight tasks; their journal entries stay.
  void stop();

  int port() const { return port_; }
  std::string url() const;
  const ExperimentStore& store() const { return store_; }

 private:
  struct Stopped {};
  struct AbortedWhileGenerating {};

  void routes();
  void poll_loop();
  void task_loop();
  void run_task(const TaskEntry& t);
  void generate(const Uid& uid);
  void submit_jobs(const Uid& uid);
  void collate_results(const Uid& uid);
  void fail(const Uid& uid, const std::string& reason);
  bool aborted(const Uid& uid) const;
  void note(const std::string& kind, const std::string& detail);

  GatewayConfig config_;
  JobSink& sink_;
  EventLog* log_;
  SteadyClock clock_;
  ExperimentStore store_;
  TaskQueue tasks_;
  std::unique_ptr<httplib::Server> http_;
  std::thread http_thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TaskEntry> ready_;
  std::set<Uid> busy_;
  std::set<Uid> aborted_;
  std::set<Uid> generated_here_;
  std::atomic<bool> stopping_{false};
  bool wake_ = false;
  std::thread poller_;
  std::vector<std::thread> workers_;
};

}  // namespace lakegrid::gws
