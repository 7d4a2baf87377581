#include <gtest/gtest.h>

#include <random>
#include <set>

#include "../support/fixtures.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/gemt/gemt.hpp"
#include "lakegrid/scheduler/core.hpp"
#include "lakegrid/scheduler/journal.hpp"
#include "lakegrid/scheduler/protocol.hpp"

using namespace lakegrid;
using namespace lakegrid::scheduler;
using namespace std::chrono_literals;

namespace {

const Uid kUid = Uid::parse(std::string(40, 'a'));

JobId job(std::uint32_t i, const Uid& uid = kUid) { return JobId{uid, i}; }

WorkerAd ad(const std::string& id, std::uint32_t slots, std::uint64_t incarnation = 1) {
  WorkerAd a;
  a.worker_id = id;
  a.total_slots = slots;
  a.free_slots = slots;
  a.memory_mb = 16384;
  a.incarnation = incarnation;
  return a;
}

SchedulerConfig config() {
  SchedulerConfig c;
  c.heartbeat_period = 2000ms;
  c.missed_beats = 3;
  c.max_retries = 3;
  return c;
}

}  // namespace

TEST(SchedulerCore, FifoPositionsAndDuplicates) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  EXPECT_EQ(core.enqueue(job(0), share("a")), 0u);
  EXPECT_EQ(core.enqueue(job(1), share("b")), 1u);
  EXPECT_EQ(core.enqueue(job(2), share("c")), 2u);
  try {
    core.enqueue(job(1), share("again"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Conflict);
  }
  EXPECT_EQ(core.queue_length(), 3u);
  EXPECT_EQ(core.queue_position(job(2)), 2u);
}

TEST(SchedulerCore, TwoThousandJobsFromTenThousandSims) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  auto groups = gemt::partition(10000, 5);
  for (std::uint32_t i = 0; i < groups.size(); ++i) core.enqueue(job(i), share("x"));
  EXPECT_EQ(core.queue_length(), (10000u + 5 - 1) / 5);
}

TEST(SchedulerCore, SingleMatch) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.enqueue(job(0), share("a"));
  core.advertise(ad("w1", 16));
  auto pairs = core.matchmake();
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].worker_id, "w1");
  EXPECT_EQ(core.workers()[0].free_slots, 15u);
  auto rec = core.records(job(0));
  ASSERT_EQ(rec.size(), 1u);
  EXPECT_EQ(rec[0].outcome, Outcome::Pending);
  EXPECT_EQ(rec[0].attempt, 1u);
}

TEST(SchedulerCore, MatchesUpToTotalSlots) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  for (std::uint32_t i = 0; i < 100; ++i) core.enqueue(job(i), share("a"));
  std::vector<std::uint32_t> slots{16, 16, 16};
  for (std::size_t w = 0; w < slots.size(); ++w) core.advertise(ad("w" + std::to_string(w), slots[w]));
  auto pairs = core.matchmake();
  std::uint32_t capacity = 0;
  for (auto s : slots) capacity += s;
  EXPECT_EQ(pairs.size(), std::min<std::size_t>(100, capacity));
  std::set<std::string> jobs;
  std::map<std::string, int> per_worker;
  for (const auto& p : pairs) {
    EXPECT_TRUE(jobs.insert(p.job.str()).second);
    ++per_worker[p.worker_id];
  }
  for (const auto& [w, n] : per_worker) EXPECT_EQ(n, 16) << w;
  // FIFO: the assigned jobs are the head of the queue.
  for (std::uint32_t i = 0; i < pairs.size(); ++i) EXPECT_TRUE(jobs.count(job(i).str()));
  EXPECT_TRUE(core.matchmake().empty());
}

TEST(SchedulerCore, StaleAdsGetNothing) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.advertise(ad("w1", 4));
  clock.advance(6001ms);
  core.enqueue(job(0), share("a"));
  EXPECT_TRUE(core.matchmake().empty());
  EXPECT_EQ(core.live_workers(), 0u);
}

TEST(SchedulerCore, HappyPath) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.enqueue(job(0), share("a"));
  core.advertise(ad("w1", 1));
  core.matchmake();
  EXPECT_EQ(core.complete(job(0), "w1", share("result")), SchedulerCore::Disposition::Accepted);
  EXPECT_EQ(core.records(job(0))[0].outcome, Outcome::Success);
  auto settled = core.take_settled();
  ASSERT_EQ(settled.size(), 1u);
  EXPECT_TRUE(settled[0].success);
  EXPECT_EQ(*settled[0].result, "result");
  EXPECT_EQ(core.workers()[0].free_slots, 1u);
}

TEST(SchedulerCore, HeartbeatLapseRequeuesAsLost) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.enqueue(job(0), share("a"));
  core.advertise(ad("w1", 1));
  core.advertise(ad("w2", 1));
  auto first = core.matchmake();
  ASSERT_EQ(first.size(), 1u);
  const auto victim = first[0].worker_id;
  const auto survivor = victim == "w1" ? "w2" : "w1";
  for (int beat = 0; beat < 4; ++beat) {
    clock.advance(2000ms);
    core.advertise(ad(survivor, 1));
    core.tick();
  }
  auto rec = core.records(job(0));
  ASSERT_EQ(rec.size(), 1u);
  EXPECT_EQ(rec[0].outcome, Outcome::Lost);
  auto second = core.matchmake();
  ASSERT_EQ(second.size(), 1u);
  EXPECT_EQ(second[0].worker_id, survivor);
  EXPECT_EQ(second[0].attempt, 2u);
}

TEST(SchedulerCore, WallLimitRetriesThenGivesUp) {
  ManualClock clock;
  auto cfg = config();
  cfg.wall_limit = 100ms;
  SchedulerCore core(cfg, clock);
  core.enqueue(job(0), share("a"));
  for (int attempt = 1; attempt <= cfg.max_retries + 1; ++attempt) {
    core.advertise(ad("w1", 1));
    auto pairs = core.matchmake();
    ASSERT_EQ(pairs.size(), 1u) << attempt;
    EXPECT_EQ(pairs[0].attempt, static_cast<std::uint32_t>(attempt));
    clock.advance(101ms);
    core.tick();
    EXPECT_EQ(core.take_aborts().size(), 1u);
  }
  auto rec = core.records(job(0));
  ASSERT_EQ(rec.size(), static_cast<std::size_t>(cfg.max_retries + 1));
  for (const auto& r : rec) {
    EXPECT_EQ(r.outcome, Outcome::Failure);
    EXPECT_EQ(r.reason, "timeout");
  }
  auto settled = core.take_settled();
  ASSERT_EQ(settled.size(), 1u);
  EXPECT_FALSE(settled[0].success);
  EXPECT_NE(settled[0].reason.find("timeout"), std::string::npos);
  EXPECT_TRUE(core.matchmake().empty());
}

TEST(SchedulerCore, DuplicateResultAfterRetryRace) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.enqueue(job(0), share("a"));
  core.advertise(ad("w1", 1));
  core.matchmake();
  core.worker_lost("w1", "link down");
  core.advertise(ad("w2", 1));
  auto retry = core.matchmake();
  ASSERT_EQ(retry.size(), 1u);
  EXPECT_EQ(retry[0].worker_id, "w2");
  // The first worker was only slow; its result arrives first and wins.
  EXPECT_EQ(core.complete(job(0), "w1", share("one")), SchedulerCore::Disposition::Accepted);
  EXPECT_EQ(core.complete(job(0), "w2", share("two")), SchedulerCore::Disposition::Duplicate);
  auto settled = core.take_settled();
  ASSERT_EQ(settled.size(), 1u);
  EXPECT_EQ(*settled[0].result, "one");
  auto aborts = core.take_aborts();
  ASSERT_EQ(aborts.size(), 1u);
  EXPECT_EQ(aborts[0].worker_id, "w2");
  EXPECT_EQ(core.pending_count(), 0u);
  EXPECT_EQ(core.duplicate_results(), 1u);
  EXPECT_EQ(core.complete(job(0), "w3", share("x")), SchedulerCore::Disposition::Duplicate);
  EXPECT_EQ(core.complete(job(7), "w1", share("x")), SchedulerCore::Disposition::Unknown);
}

TEST(SchedulerCore, AbortDropsQueueAndLateResults) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  for (std::uint32_t i = 0; i < 5; ++i) core.enqueue(job(i), share("a"));
  auto other = Uid::parse(std::string(40, 'b'));
  core.enqueue(job(0, other), share("a"));
  core.advertise(ad("w1", 2));
  ASSERT_EQ(core.matchmake().size(), 2u);
  core.abort(kUid);
  EXPECT_EQ(core.take_aborts().size(), 2u);
  EXPECT_EQ(core.queue_length(), 1u);
  EXPECT_EQ(core.queued()[0], job(0, other));
  EXPECT_EQ(core.complete(job(0), "w1", share("late")), SchedulerCore::Disposition::Aborted);
  EXPECT_TRUE(core.take_settled().empty());
  auto pairs = core.matchmake();
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].job, job(0, other));
  EXPECT_THROW(core.enqueue(job(9), share("a")), Error);
}

TEST(SchedulerCore, RestartedWorkerLosesItsJobs) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  core.enqueue(job(0), share("a"));
  core.advertise(ad("w1", 1, 1));
  core.matchmake();
  core.advertise(ad("w1", 1, 2));
  EXPECT_EQ(core.records(job(0))[0].outcome, Outcome::Lost);
  auto again = core.matchmake();
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].attempt, 2u);
}

TEST(SchedulerCore, RejectsBadAds) {
  ManualClock clock;
  SchedulerCore core(config(), clock);
  EXPECT_THROW(core.advertise(ad("w", 0)), Error);
}

// Random interleavings of dispatch, results, duplicates, kills and
// heartbeats; checks the record invariants after every step and that every
// job settles exactly once.
TEST(SchedulerCore, RandomizedInvariants) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    ManualClock clock;
    auto cfg = config();
    cfg.max_retries = 1000;  // liveness: never give up in this test
    SchedulerCore core(cfg, clock);
    const std::uint32_t jobs = 60;
    for (std::uint32_t i = 0; i < jobs; ++i) core.enqueue(job(i), share("a"));
    std::map<std::string, std::uint64_t> incarnation{{"w0", 1}, {"w1", 1}, {"w2", 1}};
    std::map<std::string, std::uint32_t> slots{{"w0", 2}, {"w1", 3}, {"w2", 4}};
    std::vector<std::pair<JobId, std::string>> in_flight;
    std::map<std::string, int> settled_count;
    for (int step = 0; step < 5000 && settled_count.size() < jobs; ++step) {
      clock.advance(Millis{static_cast<long>(rng() % 300)});
      for (auto& [w, inc] : incarnation) {
        if (rng() % 50 == 0) ++inc;  // restart
        core.advertise(ad(w, slots[w], inc));
      }
      for (const auto& a : core.matchmake()) in_flight.emplace_back(a.job, a.worker_id);
      if (!in_flight.empty()) {
        auto idx = rng() % in_flight.size();
        auto [j, w] = in_flight[idx];
        if (rng() % 4 != 0) in_flight.erase(in_flight.begin() + static_cast<long>(idx));  // else duplicate later
        core.complete(j, w, share("r"));
      }
      core.tick();
      for (const auto& s : core.take_settled()) ++settled_count[s.job.str()];
      std::map<std::string, std::uint32_t> pending_per_worker;
      for (std::uint32_t i = 0; i < jobs; ++i) {
        int pending = 0;
        for (const auto& r : core.records(job(i))) {
          if (r.outcome == Outcome::Pending) {
            ++pending;
            ++pending_per_worker[r.worker_id];
          }
        }
        ASSERT_LE(pending, 1);
      }
      for (const auto& [w, n] : pending_per_worker) ASSERT_LE(n, slots[w]);
    }
    EXPECT_EQ(settled_count.size(), jobs) << "seed " << seed;
    for (const auto& [j, n] : settled_count) EXPECT_EQ(n, 1) << j;
  }
}

TEST(Protocol, RoundTrip) {
  Message m;
  m.type = MsgType::Dispatch;
  m.header = {{"job_id", job(3).str()}, {"attempt", 2}};
  m.blob = std::string("\0\1\2binary", 9);
  auto back = decode(encode(m));
  EXPECT_EQ(back.type, MsgType::Dispatch);
  EXPECT_EQ(back.header, m.header);
  EXPECT_EQ(back.blob, m.blob);
  EXPECT_THROW(decode("\x09"), Error);
  auto a = ad("w", 16);
  auto b = ad_from_json(ad_to_json(a));
  EXPECT_EQ(b.total_slots, 16u);
  EXPECT_EQ(b.worker_id, "w");
}

TEST(Journal, RecoversUnfinishedJobsInOrder) {
  auto dir = fixtures::scratch_dir("journal");
  auto other = Uid::parse(std::string(40, 'c'));
  {
    Journal j(dir / "journal.log");
    for (std::uint32_t i = 0; i < 4; ++i) j.enqueued(job(i), dir / ("j" + std::to_string(i)));
    j.enqueued(job(0, other), dir / "o");
    j.settled(job(1), true);
    j.settled(job(3), false);
    j.aborted(other);
  }
  {
    std::ofstream torn(dir / "journal.log", std::ios::app);
    torn << R"({"op":"settle","jo)";
  }
  Journal j(dir / "journal.log");
  auto r = j.recover();
  ASSERT_EQ(r.unfinished.size(), 2u);
  EXPECT_EQ(r.unfinished[0].first, job(0));
  EXPECT_EQ(r.unfinished[1].first, job(2));
  EXPECT_EQ(r.unfinished[1].second, dir / "j2");
  EXPECT_TRUE(r.aborted.count(other));
}
