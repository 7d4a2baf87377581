#include <gtest/gtest.h>

#include <thread>

#include "../support/fixtures.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/gemt/gemt.hpp"
#include "lakegrid/overlay/fabric.hpp"
#include "lakegrid/scheduler/service.hpp"
#include "lakegrid/worker/agent.hpp"

using namespace lakegrid;
using namespace lakegrid::overlay;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

struct MiniCluster {
  explicit MiniCluster(NatClass nat = NatClass::Open) : nat_class(nat) {
    sched_peer = fabric.make_peer(nat, fabric.peer_config("scheduler"));
    sched_peer->start();
    scheduler::ServiceConfig cfg;
    cfg.core.heartbeat_period = 200ms;
    cfg.tick = 20ms;
    service = std::make_unique<scheduler::SchedulerService>(*sched_peer, cfg, &log);
    service->set_settled_handler([this](const scheduler::SchedulerCore::Settled& s) {
      std::lock_guard lock(mu);
      settled.push_back(s);
      cv.notify_all();
    });
    service->start();
    root = fixtures::scratch_dir("worker");
  }

  ~MiniCluster() {
    for (auto& a : agents) a->kill();
    service->stop();
    for (auto& p : peers) p->stop();
    sched_peer->stop();
  }

  worker::WorkerAgent& add_worker(const std::string& id, std::uint32_t slots,
                                  std::optional<std::int64_t> emulate = std::nullopt) {
    SimNetwork::HostId host = 0;
    peers.push_back(fabric.make_peer(nat_class, fabric.peer_config(id), &host));
    hosts[id] = host;
    peers.back()->start();
    worker::WorkerConfig cfg;
    cfg.slots = slots;
    cfg.scratch_root = root / id;
    cfg.heartbeat_period = 200ms;
    cfg.emulate_ms = emulate;
    agents.push_back(std::make_unique<worker::WorkerAgent>(*peers.back(), cfg, &log));
    agents.back()->start();
    return *agents.back();
  }

  bool wait_settled(std::size_t n, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu);
    return cv.wait_for(lock, timeout, [&] { return settled.size() >= n; });
  }

  bool wait_workers(std::size_t n) {
    for (int i = 0; i < 500; ++i) {
      if (service->stats().workers_live >= n) return true;
      std::this_thread::sleep_for(10ms);
    }
    return false;
  }

  NatClass nat_class;
  SimFabric fabric;
  EventLog log;
  std::unique_ptr<Peer> sched_peer;
  std::unique_ptr<scheduler::SchedulerService> service;
  std::vector<std::unique_ptr<Peer>> peers;
  std::map<std::string, SimNetwork::HostId> hosts;
  std::vector<std::unique_ptr<worker::WorkerAgent>> agents;
  fs::path root;
  std::mutex mu;
  std::condition_variable cv;
  std::vector<scheduler::SchedulerCore::Settled> settled;
};

gemt::GemtConfig k_of(std::uint32_t k) {
  gemt::GemtConfig c;
  c.group_size = k;
  return c;
}

}  // namespace

TEST(WorkerConfig, ZeroSlotsRejected) {
  SimFabric fabric;
  auto peer = fabric.make_peer(NatClass::Open, fabric.peer_config("w"));
  worker::WorkerConfig cfg;
  cfg.slots = 0;
  cfg.scratch_root = fixtures::scratch_dir("zero");
  worker::WorkerAgent agent(*peer, cfg);
  try {
    agent.start();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
}

TEST(WorkerConfig, FromKeyValues) {
  auto cfg = worker::WorkerConfig::from_kv(KeyValues::parse("slots = 16\nmemory_mb = 16384\nscratch_root = /tmp/x\n"
                                                            "scheduler = sched\nheartbeat_ms = 500\n"));
  EXPECT_EQ(cfg.slots, 16u);
  EXPECT_EQ(cfg.memory_mb, 16384u);
  EXPECT_EQ(cfg.scheduler_id, "sched");
  EXPECT_EQ(cfg.heartbeat_period, 500ms);
  EXPECT_THROW(worker::WorkerConfig::from_kv(KeyValues::parse("slots = many\n")), Error);
}

class Transparency : public ::testing::TestWithParam<NatClass> {};

// Concurrent execution over the overlay matches a sequential local run.
TEST_P(Transparency, ConcurrentRunMatchesSequentialOracle) {
  MiniCluster c(GetParam());
  auto& w1 = c.add_worker("w1", 2);
  auto& w2 = c.add_worker("w2", 2);
  ASSERT_TRUE(c.wait_workers(2));
  auto uid = Uid::generate();
  auto sims = fixtures::sims(40);
  auto bundles = gemt::group(uid, sims, k_of(5));
  for (auto& b : bundles) c.service->submit(b.job_id, share(b.archive));
  ASSERT_TRUE(c.wait_settled(bundles.size(), 60s));

  auto seq_root = fixtures::scratch_dir("sequential");
  std::map<std::string, gemt::JobResult> oracle;
  for (auto& b : bundles) {
    oracle[b.job_id.str()] = gemt::run_job(b.job_id.str(), b.archive, gemt::lake_model_runner(), seq_root);
  }
  std::lock_guard lock(c.mu);
  ASSERT_EQ(c.settled.size(), bundles.size());
  for (const auto& s : c.settled) {
    ASSERT_TRUE(s.success);
    auto r = gemt::parse_result_archive(*s.result);
    EXPECT_EQ(r, oracle.at(s.job.str())) << s.job.str();
    EXPECT_EQ(r.sims.size(), 5u);
  }
  EXPECT_LE(w1.stats().max_running, 2u);
  EXPECT_LE(w2.stats().max_running, 2u);
  EXPECT_EQ(w1.stats().jobs_completed + w2.stats().jobs_completed, bundles.size());
  if (GetParam() == NatClass::Symmetric) {
    EXPECT_EQ(c.sched_peer->link("w1")->kind, LinkKind::Relayed);
  }
}

INSTANTIATE_TEST_SUITE_P(Links, Transparency, ::testing::Values(NatClass::Open, NatClass::Symmetric),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Worker, TenSimBundleYieldsTenStatuses) {
  MiniCluster c;
  c.add_worker("w1", 1);
  ASSERT_TRUE(c.wait_workers(1));
  auto bundles = gemt::group(Uid::generate(), fixtures::sims(10), k_of(10));
  ASSERT_EQ(bundles.size(), 1u);
  c.service->submit(bundles[0].job_id, share(bundles[0].archive));
  ASSERT_TRUE(c.wait_settled(1, 30s));
  gemt::ArchiveReader reader(*c.settled[0].result);
  int statuses = 0;
  for (const auto& p : reader.paths()) statuses += p.ends_with("/" + std::string(gemt::kStatusFile)) ? 1 : 0;
  EXPECT_EQ(statuses, 10);
}

TEST(Worker, CorruptArchiveGivesJobLevelFailure) {
  MiniCluster c;
  c.add_worker("w1", 1);
  ASSERT_TRUE(c.wait_workers(1));
  JobId id{Uid::generate(), 0};
  c.service->submit(id, share("not an archive"));
  ASSERT_TRUE(c.wait_settled(1, 30s));
  auto r = gemt::parse_result_archive(*c.settled[0].result);
  EXPECT_FALSE(r.job_ok);
  EXPECT_FALSE(r.job_error.empty());
}

TEST(Worker, KilledWorkerJobsFinishElsewhere) {
  MiniCluster c;
  auto& victim = c.add_worker("victim", 2, 40);
  ASSERT_TRUE(c.wait_workers(1));
  auto bundles = gemt::group(Uid::generate(), fixtures::sims(20), k_of(5));
  for (auto& b : bundles) c.service->submit(b.job_id, share(b.archive));
  for (int i = 0; i < 200 && victim.stats().running == 0; ++i) std::this_thread::sleep_for(5ms);
  ASSERT_GT(victim.stats().running, 0u);
  c.fabric.network().set_host_down(c.hosts["victim"], true);
  victim.kill();
  c.add_worker("rescuer", 2);
  ASSERT_TRUE(c.wait_settled(bundles.size(), 60s));
  bool saw_lost = false;
  for (auto& b : bundles) {
    auto rec = c.service->records(b.job_id);
    ASSERT_FALSE(rec.empty());
    EXPECT_EQ(rec.back().outcome, scheduler::Outcome::Success);
    for (const auto& r : rec) saw_lost = saw_lost || r.outcome == scheduler::Outcome::Lost;
  }
  EXPECT_TRUE(saw_lost);
  std::set<std::string> ids;
  for (const auto& s : c.settled) EXPECT_TRUE(ids.insert(s.job.str()).second);
}

TEST(Worker, RestartStartsClean) {
  MiniCluster c;
  auto scratch = c.root / "w1";
  fs::create_directories(scratch / "slot-0" / "leftover");
  write_file(scratch / "outbox" / "stale.out", "partial");
  c.add_worker("w1", 1);
  EXPECT_FALSE(fs::exists(scratch / "slot-0" / "leftover"));
  EXPECT_FALSE(fs::exists(scratch / "outbox" / "stale.out"));
}

TEST(Worker, AbortCancelsRunningJob) {
  MiniCluster c;
  auto& w = c.add_worker("w1", 1, 200);
  ASSERT_TRUE(c.wait_workers(1));
  auto uid = Uid::generate();
  auto bundles = gemt::group(uid, fixtures::sims(10), k_of(10));
  c.service->submit(bundles[0].job_id, share(bundles[0].archive));
  for (int i = 0; i < 200 && w.stats().running == 0; ++i) std::this_thread::sleep_for(5ms);
  c.service->abort(uid);
  for (int i = 0; i < 400 && w.stats().jobs_aborted == 0; ++i) std::this_thread::sleep_for(5ms);
  EXPECT_EQ(w.stats().jobs_aborted, 1u);
  EXPECT_EQ(w.stats().results_sent, 0u);
  std::lock_guard lock(c.mu);
  EXPECT_TRUE(c.settled.empty());
}
