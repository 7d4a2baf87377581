#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lakegrid/client/client.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/gws/gateway.hpp"
#include "lakegrid/harness/topology.hpp"
#include "lakegrid/harness/virtual_cluster.hpp"
#include "lakegrid/overlay/fabric.hpp"
#include "lakegrid/scheduler/service.hpp"
#include "lakegrid/worker/agent.hpp"

namespace lakegrid::harness {

struct ClusterOptions {
  TopologySpec topology;
  std::filesystem::path root;  // wiped on start
  Millis heartbeat{250};
  std::size_t task_workers = 2;
  bool compress = true;
  std::int64_t latency_ms = 0;
};

struct Fault {
  FaultKind kind = FaultKind::WorkerKill;
  // Worker id for WORKER_KILL and FRAME_TAMPER; job id or "next" for
  // ARCHIVE_LOSS.
  std::string target;
  // Applied once this many job results have settled.
  std::uint64_t after_results = 0;
  // FRAME_TAMPER: how many data frames to corrupt.
  int frames = 3;
};

/// Every component in one process: overlay fabric, scheduler, result
/// recorder, gateway and workers with emulated per-simulation durations.
class Cluster {
 public:
  explicit Cluster(ClusterOptions options);
  ~Cluster();
  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  void start();
  void stop();

  std::string url() const { return gateway_->url(); }
  client::Session session(Millis timeout = Millis{30000}) const;
  EventLog& log() { return log_; }
  const ClusterOptions& options() const { return options_; }

  gws::Gateway& gateway() { return *gateway_; }
  // Kills the gateway and brings up a fresh one on the same data root.
  void restart_gateway();
  scheduler::SchedulerService& scheduler() { return *service_; }
  overlay::SimFabric& fabric() { return *fabric_; }
  worker::WorkerAgent& worker(const std::string& id);
  overlay::Peer& worker_peer(const std::string& id);

  // Throws Error(Harness) for an unknown target.
  void schedule_fault(Fault fault);
  std::uint64_t results_settled() const { return settled_; }
  std::uint64_t frames_tampered() const { return tampered_; }
  std::vector<std::string> faults_applied() const;

 private:
  struct Node {
    std::unique_ptr<overlay::Peer> peer;
    std::unique_ptr<worker::WorkerAgent> agent;
    overlay::SimNetwork::HostId host = 0;
  };

  void on_settled(const scheduler::SchedulerCore::Settled& s);
  void fault_loop();
  void apply(const Fault& f);
  void start_gateway();

  ClusterOptions options_;
  EventLog log_;
  SteadyClock clock_;
  std::unique_ptr<overlay::SimFabric> fabric_;
  std::unique_ptr<overlay::Peer> sched_peer_;
  std::unique_ptr<scheduler::SchedulerService> service_;
  std::unique_ptr<gws::ResultRecorder> recorder_;
  std::unique_ptr<gws::SchedulerSink> sink_;
  std::unique_ptr<gws::Gateway> gateway_;
  std::map<std::string, Node> nodes_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Fault> armed_;
  std::deque<Fault> due_;
  std::vector<std::string> applied_;
  std::string archive_loss_;  // job id, "next", or empty
  std::atomic<std::uint64_t> settled_{0};
  std::atomic<std::uint64_t> tampered_{0};
  bool stopping_ = false;
  bool started_ = false;
  std::thread fault_thread_;
};

}  // namespace lakegrid::harness
