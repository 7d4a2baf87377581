#include "lakegrid/worker/agent.hpp"

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/common/random.hpp"
#include "lakegrid/scheduler/protocol.hpp"

namespace lakegrid::worker {

namespace fs = std::filesystem;
using scheduler::Message;
using scheduler::MsgType;

void WorkerConfig::validate() const {
  if (slots < 1) throw Error(ErrorKind::Validation, "slots must be at least 1");
  if (scratch_root.empty()) throw Error(ErrorKind::Validation, "scratch_root is required");
  if (scheduler_id.empty()) throw Error(ErrorKind::Validation, "scheduler peer id is required");
  if (heartbeat_period <= Millis{0}) throw Error(ErrorKind::Validation, "heartbeat period must be positive");
  if (emulate_ms && *emulate_ms < 0) throw Error(ErrorKind::Validation, "emulate_ms must be >= 0");
}

namespace {

std::int64_t int_field(const KeyValues& kv, const std::string& key) {
  auto v = parse_int(kv.get(key));
  if (!v) throw Error(ErrorKind::Validation, "'" + key + "' must be an integer");
  return *v;
}

}  // namespace

WorkerConfig WorkerConfig::from_kv(const KeyValues& kv) {
  WorkerConfig c;
  if (kv.find("slots")) {
    auto n = int_field(kv, "slots");
    if (n < 0) throw Error(ErrorKind::Validation, "slots must be at least 1");
    c.slots = static_cast<std::uint32_t>(n);
  }
  if (kv.find("memory_mb")) c.memory_mb = static_cast<std::uint64_t>(int_field(kv, "memory_mb"));
  if (auto v = kv.find("scratch_root")) c.scratch_root = *v;
  if (auto v = kv.find("scheduler")) c.scheduler_id = *v;
  if (kv.find("heartbeat_ms")) c.heartbeat_period = Millis{int_field(kv, "heartbeat_ms")};
  if (auto v = kv.find("speed_hint")) c.speed_hint = *v;
  if (kv.find("emulate_ms")) c.emulate_ms = int_field(kv, "emulate_ms");
  return c;
}

WorkerAgent::WorkerAgent(overlay::Peer& peer, WorkerConfig config, EventLog* log)
    : WorkerAgent(peer, config, gemt::lake_model_runner(config.emulate_ms), log) {}

WorkerAgent::WorkerAgent(overlay::Peer& peer, WorkerConfig config, gemt::ModelRunner runner, EventLog* log)
    : peer_(peer), config_(std::move(config)), runner_(std::move(runner)), log_(log) {}

WorkerAgent::~WorkerAgent() { kill(); }

void WorkerAgent::start() {
  config_.validate();
  if (supervisor_.joinable()) throw Error(ErrorKind::Contract, "agent already started");
  // A restarted agent never resumes or resends old work.
  fs::remove_all(config_.scratch_root);
  fs::create_directories(outbox_dir());
  incarnation_ = secure_random_u64();
  peer_.set_message_handler([this](const std::string& from, std::string payload) {
    on_message(from, std::move(payload));
  });
  peer_.set_link_handler([this](const std::string& peer, bool up) {
    if (peer != config_.scheduler_id) return;
    std::lock_guard lock(mu_);
    linked_ = up;
    link_changed_ = true;
    sup_cv_.notify_all();
  });
  supervisor_ = std::thread([this] { supervise(); });
  for (std::uint32_t i = 0; i < config_.slots; ++i) slots_.emplace_back([this, i] { slot_loop(i); });
}

void WorkerAgent::kill() {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    stopping_ = true;
    for (auto& [_, r] : running_) *r.cancel = true;
    queue_.clear();
    work_cv_.notify_all();
    sup_cv_.notify_all();
  }
  peer_.set_message_handler({});
  peer_.set_link_handler({});
  if (supervisor_.joinable()) supervisor_.join();
  for (auto& t : slots_) {
    if (t.joinable()) t.join();
  }
}

WorkerAgent::Stats WorkerAgent::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void WorkerAgent::on_message(const std::string& from, std::string payload) {
  if (from != config_.scheduler_id) return;
  Message m;
  try {
    m = scheduler::decode(payload);
  } catch (const Error&) {
    return;
  }
  std::lock_guard lock(mu_);
  if (stopping_) return;
  if (m.type == MsgType::Dispatch) {
    std::string job_id = m.header.value("job_id", std::string());
    if (job_id.empty()) return;
    queue_.push_back(Pending{job_id, std::move(m.blob)});
    ++stats_.jobs_received;
    work_cv_.notify_one();
  } else if (m.type == MsgType::Abort) {
    const auto job_id = m.header.value("job_id", std::string());
    std::erase_if(queue_, [&](const Pending& p) { return p.job_id == job_id; });
    if (auto it = running_.find(job_id); it != running_.end()) *it->second.cancel = true;
    std::erase(outbox_, job_id);
  }
}

void WorkerAgent::send_ad(bool first) {
  nlohmann::json running = nlohmann::json::array();
  scheduler::WorkerAd ad;
  ad.worker_id = peer_.peer_id();
  ad.total_slots = config_.slots;
  ad.memory_mb = config_.memory_mb;
  ad.speed_hint = config_.speed_hint;
  ad.incarnation = incarnation_;
  {
    std::lock_guard lock(mu_);
    const auto busy = running_.size() + queue_.size();
    ad.free_slots = busy >= config_.slots ? 0 : static_cast<std::uint32_t>(config_.slots - busy);
    for (const auto& [id, _] : running_) running.push_back(id);
  }
  Message m;
  m.type = first ? MsgType::Advertise : MsgType::Heartbeat;
  m.header = scheduler::ad_to_json(ad);
  m.header["running"] = running;
  peer_.send(config_.scheduler_id, scheduler::encode(m));
}

void WorkerAgent::flush_outbox() {
  for (;;) {
    std::string job_id;
    {
      std::lock_guard lock(mu_);
      if (outbox_.empty() || stopping_) return;
      job_id = outbox_.front();
    }
    const auto file = outbox_dir() / gemt::result_archive_name(job_id);
    Message m;
    m.type = MsgType::Result;
    m.header = {{"job_id", job_id}};
    m.blob = read_file(file);
    peer_.send(config_.scheduler_id, scheduler::encode(m));  // throws without a link
    fs::remove(file);
    std::lock_guard lock(mu_);
    std::erase(outbox_, job_id);
    ++stats_.results_sent;
  }
}

void WorkerAgent::supervise() {
  auto next_beat = std::chrono::steady_clock::now();
  bool advertised = false;
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
    }
    if (!linked_) {
      advertised = false;
      try {
        peer_.establish(config_.scheduler_id);
        linked_ = true;
      } catch (const Error& e) {
        if (log_) log_->append(0, peer_.peer_id(), "link_retry", e.what());
        std::unique_lock lock(mu_);
        sup_cv_.wait_for(lock, config_.reconnect_backoff, [&] { return stopping_; });
        continue;
      }
    }
    try {
      const auto now = std::chrono::steady_clock::now();
      if (!advertised || now >= next_beat) {
        send_ad(!advertised);
        advertised = true;
        next_beat = now + config_.heartbeat_period;
      }
      flush_outbox();
    } catch (const Error&) {
      linked_ = false;  // send failed: the link is gone
      continue;
    }
    std::unique_lock lock(mu_);
    sup_cv_.wait_until(lock, next_beat, [&] { return stopping_ || !outbox_.empty() || link_changed_; });
    link_changed_ = false;
  }
}

void WorkerAgent::slot_loop(std::uint32_t index) {
  const auto scratch = config_.scratch_root / ("slot-" + std::to_string(index));
  for (;;) {
    Pending job;
    auto cancel = std::make_shared<std::atomic<bool>>(false);
    {
      std::unique_lock lock(mu_);
      work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      running_[job.job_id] = Running{cancel};
      stats_.running = static_cast<std::uint32_t>(running_.size());
      stats_.max_running = std::max(stats_.max_running, stats_.running);
    }
    auto result = gemt::run_job(job.job_id, std::move(job.archive), runner_, scratch, cancel.get());
    std::string archive;
    if (!*cancel) archive = gemt::result_archive(result, config_.compress_results);
    std::lock_guard lock(mu_);
    running_.erase(job.job_id);
    stats_.running = static_cast<std::uint32_t>(running_.size());
    if (*cancel || stopping_) {
      ++stats_.jobs_aborted;
      continue;
    }
    write_file_atomic(outbox_dir() / gemt::result_archive_name(job.job_id), archive);
    outbox_.push_back(job.job_id);
    ++stats_.jobs_completed;
    sup_cv_.notify_all();
  }
}

}  // namespace lakegrid::worker
