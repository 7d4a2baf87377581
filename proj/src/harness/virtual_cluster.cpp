#include "lakegrid/harness/virtual_cluster.hpp"

#include <queue>
#include <random>
#include <set>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/event_log.hpp"
#include "lakegrid/scheduler/core.hpp"

namespace lakegrid::harness {

std::string_view to_string(FaultKind k) {
  switch (k) {
    case FaultKind::WorkerKill: return "WORKER_KILL";
    case FaultKind::FrameTamper: return "FRAME_TAMPER";
    case FaultKind::ArchiveLoss: return "ARCHIVE_LOSS";
  }
  return "?";
}

FaultKind parse_fault_kind(std::string_view s) {
  for (auto k : {FaultKind::WorkerKill, FaultKind::FrameTamper, FaultKind::ArchiveLoss}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::Harness, "unknown fault kind '" + std::string(s) + "'");
}

namespace {

enum class Ev { Heartbeat, Tick, Finish, Kill };

struct Event {
  std::int64_t t = 0;
  std::uint64_t seq = 0;
  Ev kind = Ev::Tick;
  std::string worker;
  std::string job;
  std::uint32_t attempt = 0;

  bool operator>(const Event& o) const { return std::tie(t, seq) > std::tie(o.t, o.seq); }
};

struct Node {
  WorkerSpec spec;
  bool alive = true;
  std::int64_t busy_ms = 0;
};

}  // namespace

VirtualRun run_virtual(const VirtualOptions& o) {
  o.topology.validate();
  if (o.sims == 0) throw Error(ErrorKind::Harness, "virtual run needs at least one simulation");

  ManualClock clock;
  EventLog log;
  scheduler::SchedulerConfig cfg;
  cfg.heartbeat_period = o.heartbeat;
  scheduler::SchedulerCore core(cfg, clock, &log);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> jitter(1.0 - o.jitter, 1.0 + o.jitter);

  std::map<std::string, Node> nodes;
  for (const auto& w : o.topology.workers) nodes[w.id] = Node{w, true, 0};
  for (const auto& f : o.faults) {
    if (f.kind != FaultKind::WorkerKill) throw Error(ErrorKind::Harness, "virtual runs only model WORKER_KILL");
    if (!nodes.count(f.target)) throw Error(ErrorKind::Harness, "unknown fault target '" + f.target + "'");
  }

  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  std::uint64_t seq = 0;
  auto push = [&](std::int64_t t, Ev kind, std::string worker = {}, std::string job = {}, std::uint32_t attempt = 0) {
    events.push(Event{t, seq++, kind, std::move(worker), std::move(job), attempt});
  };

  const Uid uid = Uid::parse(std::string(Uid::kLength, 'a'));
  std::map<std::string, std::uint64_t> job_sims;
  const auto g = o.topology.group_size;
  for (std::uint64_t first = 0, ordinal = 0; first < o.sims; first += g, ++ordinal) {
    JobId id{uid, static_cast<std::uint32_t>(ordinal)};
    job_sims[id.str()] = std::min<std::uint64_t>(g, o.sims - first);
    core.enqueue(id, share(std::string()));
  }

  auto advertise = [&](const Node& n) {
    scheduler::WorkerAd ad;
    ad.worker_id = n.spec.id;
    ad.total_slots = n.spec.slots;
    ad.free_slots = n.spec.slots;
    ad.memory_mb = 1024;
    ad.last_heartbeat = clock.now();
    ad.incarnation = 1;
    core.advertise(ad);
  };
  for (auto& [id, n] : nodes) {
    advertise(n);
    push(o.heartbeat.count(), Ev::Heartbeat, id);
  }
  for (const auto& f : o.faults) push(f.at.count(), Ev::Kill, f.target);
  push(o.heartbeat.count() / 2, Ev::Tick);

  VirtualRun run;
  run.jobs = job_sims.size();
  std::set<std::string> settled;
  std::set<std::pair<std::string, std::string>> cancelled;  // (job, worker)
  std::uint64_t failed = 0;

  auto process = [&] {
    for (const auto& a : core.matchmake()) {
      auto& n = nodes.at(a.worker_id);
      double d = static_cast<double>(job_sims.at(a.job.str()) * n.spec.duration_ms);
      if (o.jitter > 0) d *= jitter(rng);
      const auto run_ms = static_cast<std::int64_t>(d + 0.5);
      n.busy_ms += run_ms;
      push(clock.now().count() + o.dispatch_latency.count() + run_ms, Ev::Finish, a.worker_id, a.job.str(), a.attempt);
    }
    for (const auto& ab : core.take_aborts()) cancelled.insert({ab.job.str(), ab.worker_id});
    for (const auto& s : core.take_settled()) {
      settled.insert(s.job.str());
      if (!s.success) ++failed;
      run.makespan = clock.now();
    }
  };

  process();
  while (!events.empty() && settled.size() < job_sims.size()) {
    auto e = events.top();
    events.pop();
    if (e.t > o.horizon.count()) break;
    clock.set(Millis{e.t});
    switch (e.kind) {
      case Ev::Heartbeat:
        if (nodes.at(e.worker).alive) {
          advertise(nodes.at(e.worker));
          push(e.t + o.heartbeat.count(), Ev::Heartbeat, e.worker);
        }
        break;
      case Ev::Tick:
        core.tick();
        push(e.t + o.heartbeat.count() / 2, Ev::Tick);
        break;
      case Ev::Kill:
        nodes.at(e.worker).alive = false;
        log.append(e.t, "harness", "fault", std::string(to_string(FaultKind::WorkerKill)) + " " + e.worker);
        break;
      case Ev::Finish: {
        if (!nodes.at(e.worker).alive || cancelled.count({e.job, e.worker})) break;
        log.append(e.t, "harness", "finish", e.job + " " + e.worker);
        core.complete(JobId::parse(e.job), e.worker, share(std::string()));
        break;
      }
    }
    process();
  }

  run.valid = settled.size() == job_sims.size() && failed == 0;
  run.duplicates = core.duplicate_results();
  for (const auto& [job, sims] : job_sims) {
    for (const auto& r : core.records(JobId::parse(job))) {
      if (r.outcome == scheduler::Outcome::Lost) ++run.lost_attempts;
      if (r.outcome == scheduler::Outcome::Success) run.sims_per_worker[r.worker_id] += sims;
    }
  }
  for (const auto& [id, n] : nodes) {
    const double span = static_cast<double>(run.makespan.count()) * n.spec.slots;
    run.utilization[id] = span > 0 ? static_cast<double>(n.busy_ms) / span : 0.0;
  }
  run.event_log = log.to_text();
  return run;
}

}  // namespace lakegrid::harness
