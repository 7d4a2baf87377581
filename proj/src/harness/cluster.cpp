#include "lakegrid/harness/cluster.hpp"

#include "lakegrid/common/error.hpp"
#include "lakegrid/overlay/wire.hpp"

namespace lakegrid::harness {

namespace fs = std::filesystem;

Cluster::Cluster(ClusterOptions options) : options_(std::move(options)) {
  options_.topology.validate();
  if (options_.root.empty()) throw Error(ErrorKind::Harness, "cluster root is required");
}

Cluster::~Cluster() { stop(); }

void Cluster::start() {
  fs::remove_all(options_.root);
  fs::create_directories(options_.root);
  overlay::SimFabric::Options fo;
  fo.network.latency_ms = options_.latency_ms;
  fo.relay = options_.topology.relay;
  fabric_ = std::make_unique<overlay::SimFabric>(fo);

  sched_peer_ = fabric_->make_peer(options_.topology.scheduler_nat, fabric_->peer_config("scheduler"));
  sched_peer_->start();
  scheduler::ServiceConfig sc;
  sc.core.heartbeat_period = options_.heartbeat;
  sc.tick = Millis{20};
  sc.journal = options_.root / "scheduler.journal";
  service_ = std::make_unique<scheduler::SchedulerService>(*sched_peer_, sc, &log_);
  recorder_ = std::make_unique<gws::ResultRecorder>(options_.root / "data", &log_);
  service_->set_settled_handler([this](const scheduler::SchedulerCore::Settled& s) { on_settled(s); });
  service_->start();
  sink_ = std::make_unique<gws::SchedulerSink>(*service_);
  start_gateway();

  for (const auto& w : options_.topology.workers) {
    Node n;
    n.peer = fabric_->make_peer(w.nat, fabric_->peer_config(w.id), &n.host);
    n.peer->start();
    worker::WorkerConfig wc;
    wc.slots = w.slots;
    wc.scratch_root = options_.root / "workers" / w.id;
    wc.heartbeat_period = options_.heartbeat;
    wc.emulate_ms = w.duration_ms;
    wc.compress_results = options_.compress;
    n.agent = std::make_unique<worker::WorkerAgent>(*n.peer, wc, &log_);
    n.agent->start();
    nodes_.emplace(w.id, std::move(n));
  }
  {
    std::lock_guard lk(mu_);
    stopping_ = false;
    started_ = true;
  }
  fault_thread_ = std::thread([this] { fault_loop(); });

  // Wait until the scheduler has seen every worker.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (service_->stats().workers_live < nodes_.size()) {
    if (std::chrono::steady_clock::now() > deadline) throw Error(ErrorKind::Harness, "workers did not register");
    std::this_thread::sleep_for(Millis{10});
  }
}

void Cluster::start_gateway() {
  gws::GatewayConfig gc;
  gc.data_root = options_.root / "data";
  gc.task_workers = options_.task_workers;
  gc.gemt.group_size = options_.topology.group_size;
  gc.gemt.compress = options_.compress;
  gateway_ = std::make_unique<gws::Gateway>(gc, *sink_, &log_);
  gateway_->start();
}

void Cluster::restart_gateway() {
  log_.append(clock_.now().count(), "harness", "gateway_restart");
  gateway_->stop();
  gateway_.reset();
  start_gateway();
}

void Cluster::stop() {
  {
    std::lock_guard lk(mu_);
    if (!started_) return;
    started_ = false;
    stopping_ = true;
  }
  cv_.notify_all();
  if (fault_thread_.joinable()) fault_thread_.join();
  for (auto& [id, n] : nodes_) n.agent->kill();
  if (gateway_) gateway_->stop();
  service_->stop();
  for (auto& [id, n] : nodes_) n.peer->stop();
  sched_peer_->stop();
  nodes_.clear();
  gateway_.reset();
  sink_.reset();
  service_.reset();
  recorder_.reset();
  sched_peer_.reset();
  fabric_.reset();
}

client::Session Cluster::session(Millis timeout) const {
  client::ClientOptions o;
  o.service_url = url();
  o.timeout = timeout;
  return client::Session(o);
}

worker::WorkerAgent& Cluster::worker(const std::string& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorKind::Harness, "unknown worker '" + id + "'");
  return *it->second.agent;
}

overlay::Peer& Cluster::worker_peer(const std::string& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorKind::Harness, "unknown worker '" + id + "'");
  return *it->second.peer;
}

std::vector<std::string> Cluster::faults_applied() const {
  std::lock_guard lk(mu_);
  return applied_;
}

void Cluster::schedule_fault(Fault f) {
  if (f.kind != FaultKind::ArchiveLoss && !nodes_.count(f.target)) {
    throw Error(ErrorKind::Harness, "unknown fault target '" + f.target + "'");
  }
  if (f.kind == FaultKind::ArchiveLoss && f.target != "next") JobId::parse(f.target);
  std::lock_guard lk(mu_);
  if (f.after_results <= settled_) {
    due_.push_back(std::move(f));
    cv_.notify_all();
  } else {
    armed_.push_back(std::move(f));
  }
}

void Cluster::on_settled(const scheduler::SchedulerCore::Settled& s) {
  bool lose = false;
  {
    std::lock_guard lk(mu_);
    if (!archive_loss_.empty() && (archive_loss_ == "next" || archive_loss_ == s.job.str())) {
      lose = true;
      archive_loss_.clear();
    }
  }
  if (lose) {
    log_.append(clock_.now().count(), "harness", "archive_lost", s.job.str());
    recorder_->record_missing(s.job, "result archive lost");
  } else {
    recorder_->on_settled(s);
  }
  const auto n = ++settled_;
  std::lock_guard lk(mu_);
  for (auto it = armed_.begin(); it != armed_.end();) {
    if (it->after_results <= n) {
      due_.push_back(*it);
      it = armed_.erase(it);
    } else {
      ++it;
    }
  }
  if (!due_.empty()) cv_.notify_all();
}

void Cluster::fault_loop() {
  std::unique_lock lk(mu_);
  for (;;) {
    cv_.wait(lk, [this] { return stopping_ || !due_.empty(); });
    if (stopping_) return;
    auto f = due_.front();
    due_.pop_front();
    lk.unlock();
    apply(f);
    lk.lock();
  }
}

void Cluster::apply(const Fault& f) {
  log_.append(clock_.now().count(), "harness", "fault", std::string(to_string(f.kind)) + " " + f.target);
  switch (f.kind) {
    case FaultKind::WorkerKill: {
      auto& n = nodes_.at(f.target);
      // Cut the host off first so nothing escapes, as in a crash.
      fabric_->network().set_host_down(n.host, true);
      n.agent->kill();
      break;
    }
    case FaultKind::FrameTamper: {
      const auto addr = nodes_.at(f.target).peer->descriptor().reflexive;
      auto budget = std::make_shared<std::atomic<int>>(f.frames);
      fabric_->network().add_tap([this, addr, budget](overlay::Packet& p) {
        if (p.dst == addr && overlay::wire::kind_of(p.data) == overlay::wire::Kind::Data && p.data.size() > 60 &&
            budget->fetch_sub(1) > 0) {
          p.data[p.data.size() / 2] ^= 0x10;
          ++tampered_;
        }
        return overlay::TapVerdict::Pass;
      });
      break;
    }
    case FaultKind::ArchiveLoss: {
      std::lock_guard lk(mu_);
      archive_loss_ = f.target;
      break;
    }
  }
  std::lock_guard lk(mu_);
  applied_.push_back(std::string(to_string(f.kind)) + " " + f.target);
}

}  // namespace lakegrid::harness
