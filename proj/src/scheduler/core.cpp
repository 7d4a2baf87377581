#include "lakegrid/scheduler/core.hpp"

#include "lakegrid/common/error.hpp"

namespace lakegrid::scheduler {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Pending: return "PENDING";
    case Outcome::Success: return "SUCCESS";
    case Outcome::Failure: return "FAILURE";
    case Outcome::Lost: return "LOST";
  }
  return "?";
}

SchedulerCore::SchedulerCore(SchedulerConfig config, const Clock& clock, EventLog* log)
    : config_(config), clock_(clock), log_(log) {
  if (config_.max_retries < 0 || config_.missed_beats < 1 || config_.heartbeat_period <= Millis{0}) {
    throw Error(ErrorKind::Validation, "invalid scheduler configuration");
  }
}

void SchedulerCore::log(const std::string& kind, const std::string& detail) {
  if (log_) log_->append(clock_.now().count(), "scheduler", kind, detail);
}

std::size_t SchedulerCore::enqueue(const JobId& job, SharedBytes archive) {
  const auto key = job.str();
  if (jobs_.count(key)) throw Error(ErrorKind::Conflict, "duplicate job_id " + key);
  if (aborted_.count(job.uid)) throw Error(ErrorKind::Conflict, "experiment " + job.uid.str() + " was aborted");
  Job j{job, next_seq_++, std::move(archive), {}, false, false};
  queue_[j.seq] = key;
  jobs_.emplace(key, std::move(j));
  log("enqueue", key);
  return queue_.size() - 1;
}

bool SchedulerCore::fresh(const WorkerAd& ad) const {
  return clock_.now() - ad.last_heartbeat <= config_.liveness_window();
}

void SchedulerCore::advertise(WorkerAd ad) {
  if (ad.worker_id.empty() || ad.total_slots < 1) {
    throw Error(ErrorKind::Validation, "worker ad needs an id and at least one slot");
  }
  auto it = workers_.find(ad.worker_id);
  if (it == workers_.end()) {
    log("worker_joined", ad.worker_id + " slots=" + std::to_string(ad.total_slots));
  } else if (it->second.incarnation != ad.incarnation) {
    worker_lost(ad.worker_id, "worker restarted");
  }
  ad.last_heartbeat = clock_.now();
  const auto busy = static_cast<std::uint32_t>(running_[ad.worker_id].size());
  ad.free_slots = ad.total_slots > busy ? ad.total_slots - busy : 0;
  workers_[ad.worker_id] = std::move(ad);
}

std::vector<SchedulerCore::Assignment> SchedulerCore::matchmake() {
  std::vector<Assignment> out;
  std::vector<WorkerAd*> candidates;
  for (auto& [id, ad] : workers_) {
    if (fresh(ad) && ad.free_slots > 0) candidates.push_back(&ad);
  }
  while (!queue_.empty() && !candidates.empty()) {
    // Most free slots first; ties go to the smaller worker id.
    WorkerAd* best = nullptr;
    for (auto* c : candidates) {
      if (c->free_slots > 0 && (!best || c->free_slots > best->free_slots)) best = c;
    }
    if (!best) break;
    auto head = queue_.begin();
    auto& job = jobs_.at(head->second);
    queue_.erase(head);
    DispatchRecord rec;
    rec.job_id = job.id.str();
    rec.worker_id = best->worker_id;
    rec.attempt = static_cast<std::uint32_t>(job.records.size() + 1);
    rec.dispatched_at = clock_.now();
    job.records.push_back(rec);
    running_[best->worker_id].insert(rec.job_id);
    --best->free_slots;
    out.push_back(Assignment{job.id, best->worker_id, rec.attempt});
    log("dispatch", rec.job_id + " " + rec.worker_id + " attempt=" + std::to_string(rec.attempt));
  }
  return out;
}

DispatchRecord* SchedulerCore::pending_record(Job& j) {
  if (!j.records.empty() && j.records.back().outcome == Outcome::Pending) return &j.records.back();
  return nullptr;
}

void SchedulerCore::end_attempt(Job& j, Outcome outcome, const std::string& reason) {
  auto* rec = pending_record(j);
  if (!rec) return;
  rec->outcome = outcome;
  rec->reason = reason;
  running_[rec->worker_id].erase(rec->job_id);
  if (auto w = workers_.find(rec->worker_id); w != workers_.end() && w->second.free_slots < w->second.total_slots) {
    ++w->second.free_slots;
  }
  log(outcome == Outcome::Lost ? "lost" : "failure", rec->job_id + " " + rec->worker_id + " " + reason);
  if (rec->attempt >= static_cast<std::uint32_t>(config_.max_retries) + 1) {
    j.settled = true;
    j.archive.reset();
    settled_.push_back(Settled{j.id, false, nullptr,
                               "gave up after " + std::to_string(rec->attempt) + " attempts: " + reason});
    log("job_failed", rec->job_id);
    return;
  }
  queue_[j.seq] = j.id.str();
  log("requeue", rec->job_id);
}

void SchedulerCore::dispatch_failed(const JobId& job, const std::string& reason) {
  auto it = jobs_.find(job.str());
  if (it == jobs_.end() || it->second.settled) return;
  end_attempt(it->second, Outcome::Failure, "transfer failed: " + reason);
}

SchedulerCore::Disposition SchedulerCore::complete(const JobId& job, const std::string& worker_id,
                                                   SharedBytes result) {
  const auto key = job.str();
  auto it = jobs_.find(key);
  if (it == jobs_.end()) {
    log("stale_result", key + " " + worker_id);
    return Disposition::Unknown;
  }
  auto& j = it->second;
  if (j.aborted) {
    log("result_dropped", key + " aborted");
    return Disposition::Aborted;
  }
  if (j.settled) {
    ++duplicates_;
    log("duplicate_result", key + " " + worker_id);
    return Disposition::Duplicate;
  }
  bool ran_there = false;
  for (const auto& r : j.records) ran_there = ran_there || r.worker_id == worker_id;
  if (!ran_there) {
    log("stale_result", key + " " + worker_id);
    return Disposition::Unknown;
  }
  if (auto* rec = pending_record(j)) {
    running_[rec->worker_id].erase(key);
    if (auto w = workers_.find(rec->worker_id);
        w != workers_.end() && w->second.free_slots < w->second.total_slots) {
      ++w->second.free_slots;
    }
    if (rec->worker_id == worker_id) {
      rec->outcome = Outcome::Success;
    } else {
      // An earlier attempt finished first; the retry is no longer needed.
      rec->outcome = Outcome::Failure;
      rec->reason = "superseded";
      aborts_.push_back(AbortOrder{j.id, rec->worker_id});
    }
  } else {
    queue_.erase(j.seq);
  }
  j.settled = true;
  j.archive.reset();
  settled_.push_back(Settled{j.id, true, std::move(result), {}});
  log("result", key + " " + worker_id);
  return Disposition::Accepted;
}

void SchedulerCore::worker_lost(const std::string& worker_id, const std::string& reason) {
  auto jobs = running_[worker_id];
  for (const auto& key : jobs) end_attempt(jobs_.at(key), Outcome::Lost, reason);
  if (auto w = workers_.find(worker_id); w != workers_.end()) {
    w->second.last_heartbeat = clock_.now() - config_.liveness_window() - Millis{1};
  }
  log("worker_lost", worker_id + " " + reason);
}

void SchedulerCore::tick() {
  const auto now = clock_.now();
  std::vector<std::string> lapsed;
  for (const auto& [id, ad] : workers_) {
    if (!fresh(ad) && !running_[id].empty()) lapsed.push_back(id);
  }
  for (const auto& id : lapsed) worker_lost(id, "heartbeat lapse");
  if (config_.wall_limit <= Millis{0}) return;
  for (auto& [key, j] : jobs_) {
    auto* rec = pending_record(j);
    if (rec && now - rec->dispatched_at > config_.wall_limit) {
      aborts_.push_back(AbortOrder{j.id, rec->worker_id});
      end_attempt(j, Outcome::Failure, "timeout");
    }
  }
}

void SchedulerCore::abort(const Uid& uid) {
  aborted_.insert(uid);
  for (auto& [key, j] : jobs_) {
    if (j.id.uid != uid || j.settled) continue;
    if (auto* rec = pending_record(j)) {
      rec->outcome = Outcome::Failure;
      rec->reason = "aborted";
      running_[rec->worker_id].erase(key);
      if (auto w = workers_.find(rec->worker_id);
          w != workers_.end() && w->second.free_slots < w->second.total_slots) {
        ++w->second.free_slots;
      }
      aborts_.push_back(AbortOrder{j.id, rec->worker_id});
    }
    queue_.erase(j.seq);
    j.aborted = true;
    j.settled = true;
    j.archive.reset();
  }
  log("abort", uid.str());
}

std::vector<SchedulerCore::AbortOrder> SchedulerCore::take_aborts() { return std::exchange(aborts_, {}); }
std::vector<SchedulerCore::Settled> SchedulerCore::take_settled() { return std::exchange(settled_, {}); }

SharedBytes SchedulerCore::archive(const JobId& job) const {
  auto it = jobs_.find(job.str());
  if (it == jobs_.end() || !it->second.archive) throw Error(ErrorKind::NotFound, "no archive for " + job.str());
  return it->second.archive;
}

std::optional<std::size_t> SchedulerCore::queue_position(const JobId& job) const {
  std::size_t pos = 0;
  const auto key = job.str();
  for (const auto& [_, id] : queue_) {
    if (id == key) return pos;
    ++pos;
  }
  return std::nullopt;
}

std::vector<JobId> SchedulerCore::queued() const {
  std::vector<JobId> out;
  for (const auto& [_, id] : queue_) out.push_back(jobs_.at(id).id);
  return out;
}

std::size_t SchedulerCore::pending_count() const {
  std::size_t n = 0;
  for (const auto& [_, s] : running_) n += s.size();
  return n;
}

std::size_t SchedulerCore::pending_on(const std::string& worker_id) const {
  auto it = running_.find(worker_id);
  return it == running_.end() ? 0 : it->second.size();
}

std::vector<DispatchRecord> SchedulerCore::records(const JobId& job) const {
  auto it = jobs_.find(job.str());
  return it == jobs_.end() ? std::vector<DispatchRecord>{} : it->second.records;
}

std::vector<WorkerAd> SchedulerCore::workers() const {
  std::vector<WorkerAd> out;
  for (const auto& [_, ad] : workers_) out.push_back(ad);
  return out;
}

std::size_t SchedulerCore::live_workers() const {
  std::size_t n = 0;
  for (const auto& [_, ad] : workers_) n += fresh(ad) ? 1 : 0;
  return n;
}

bool SchedulerCore::finished(const JobId& job) const {
  auto it = jobs_.find(job.str());
  return it != jobs_.end() && it->second.settled;
}

}  // namespace lakegrid::scheduler
