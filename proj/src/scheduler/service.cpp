#include "lakegrid/scheduler/service.hpp"

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"

namespace lakegrid::scheduler {

SchedulerService::SchedulerService(overlay::Peer& peer, ServiceConfig config, EventLog* log)
    : peer_(peer), config_(std::move(config)), log_(log), core_(config_.core, clock_, log) {
  if (!config_.journal.empty()) journal_ = std::make_unique<Journal>(config_.journal);
}

SchedulerService::~SchedulerService() { stop(); }

void SchedulerService::start() {
  if (running_.exchange(true)) return;
  loop_.call([this] {
    if (!journal_) return;
    auto rec = journal_->recover();
    for (const auto& uid : rec.aborted) core_.abort(uid);
    for (const auto& [job, path] : rec.unfinished) {
      try {
        core_.enqueue(job, share(read_file(path)));
        if (log_) log_->append(clock_.now().count(), "scheduler", "recovered", job.str());
      } catch (const Error& e) {
        if (log_) log_->append(clock_.now().count(), "scheduler", "recover_failed", job.str() + " " + e.what());
      }
    }
  });
  peer_.set_message_handler([this](const std::string& from, std::string payload) {
    loop_.post([this, from, p = std::move(payload)]() mutable { on_message(from, std::move(p)); });
  });
  peer_.set_link_handler([this](const std::string& peer, bool up) {
    if (up) return;
    loop_.post([this, peer] {
      core_.worker_lost(peer, "link down");
      process();
    });
  });
  loop_.post_after(config_.tick, [this] { tick(); });
}

void SchedulerService::stop() {
  if (!running_.exchange(false)) return;
  peer_.set_message_handler({});
  peer_.set_link_handler({});
  loop_.stop();
}

std::size_t SchedulerService::submit(const JobId& job, SharedBytes archive, const std::filesystem::path& archive_path) {
  return loop_.call([&] {
    auto pos = core_.enqueue(job, std::move(archive));
    if (journal_) journal_->enqueued(job, archive_path);
    process();
    return pos;
  });
}

void SchedulerService::abort(const Uid& uid) {
  loop_.call([&] {
    core_.abort(uid);
    if (journal_) journal_->aborted(uid);
    process();
  });
}

void SchedulerService::on_message(const std::string& from, std::string payload) {
  Message m;
  try {
    m = decode(payload);
  } catch (const Error& e) {
    if (log_) log_->append(clock_.now().count(), "scheduler", "bad_message", from + " " + e.what());
    return;
  }
  try {
    switch (m.type) {
      case MsgType::Advertise:
      case MsgType::Heartbeat: {
        auto ad = ad_from_json(m.header);
        ad.worker_id = from;  // the overlay authenticated the sender
        core_.advertise(std::move(ad));
        break;
      }
      case MsgType::Result: {
        auto job = JobId::parse(m.header.at("job_id").get<std::string>());
        auto d = core_.complete(job, from, share(std::move(m.blob)));
        if (d == SchedulerCore::Disposition::Accepted) ++counters_.results;
        if (d == SchedulerCore::Disposition::Duplicate) ++counters_.duplicates;
        if (d == SchedulerCore::Disposition::Unknown) ++counters_.stale;
        break;
      }
      default: break;
    }
  } catch (const std::exception& e) {
    if (log_) log_->append(clock_.now().count(), "scheduler", "bad_message", from + " " + e.what());
  }
  process();
}

void SchedulerService::process() {
  for (bool again = true; again;) {
    again = false;
    for (const auto& a : core_.matchmake()) {
      Message m;
      m.type = MsgType::Dispatch;
      m.header = {{"job_id", a.job.str()}, {"attempt", a.attempt}};
      m.blob = *core_.archive(a.job);
      try {
        peer_.send(a.worker_id, encode(m));
        ++counters_.dispatched;
      } catch (const Error& e) {
        ++counters_.transfer_failures;
        core_.dispatch_failed(a.job, e.what());
        core_.worker_lost(a.worker_id, "no link");
        again = true;
      }
    }
  }
  for (const auto& order : core_.take_aborts()) {
    Message m;
    m.type = MsgType::Abort;
    m.header = {{"job_id", order.job.str()}};
    try {
      peer_.send(order.worker_id, encode(m));
    } catch (const Error&) {
    }
  }
  for (const auto& s : core_.take_settled()) {
    if (journal_) journal_->settled(s.job, s.success);
    if (settled_handler_) {
      try {
        settled_handler_(s);
      } catch (const std::exception& e) {
        if (log_) log_->append(clock_.now().count(), "scheduler", "settle_handler_failed", s.job.str() + " " + e.what());
      }
    }
  }
}

void SchedulerService::tick() {
  if (!running_) return;
  core_.tick();
  process();
  loop_.post_after(config_.tick, [this] { tick(); });
}

SchedulerService::Stats SchedulerService::stats() const {
  return loop_.call([this] {
    Stats s = counters_;
    s.queue_depth = core_.queue_length();
    s.pending = core_.pending_count();
    s.workers_live = core_.live_workers();
    return s;
  });
}

std::vector<DispatchRecord> SchedulerService::records(const JobId& job) const {
  return loop_.call([&] { return core_.records(job); });
}

std::vector<WorkerAd> SchedulerService::workers() const {
  return loop_.call([&] { return core_.workers(); });
}

}  // namespace lakegrid::scheduler
