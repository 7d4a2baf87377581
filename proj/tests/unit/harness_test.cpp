#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <thread>

#include "../support/fixtures.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/gemt/archive.hpp"
#include "lakegrid/harness/cluster.hpp"
#include "lakegrid/harness/deploy.hpp"
#include "lakegrid/harness/replay.hpp"
#include "lakegrid/harness/virtual_cluster.hpp"

using namespace lakegrid;
using namespace lakegrid::harness;
namespace fs = std::filesystem;

namespace {

TopologySpec small_topology(std::uint32_t slots = 4, std::int64_t d = 20) {
  return TopologySpec::parse("workers = w1,w2\nw1.slots = " + std::to_string(slots) +
                             "\nw1.duration_ms = " + std::to_string(d) + "\nw2.slots = " + std::to_string(slots) +
                             "\nw2.duration_ms = " + std::to_string(d) + "\nw2.nat = FULL_CONE\ngroup_size = 5\n");
}

nlohmann::json summary_of(const std::string& results) {
  auto files = gemt::unpack(results);
  return nlohmann::json::parse(files.at("summary.meta"));
}

// Outputs keyed by "sim/file", summary excluded.
std::map<std::string, std::string> outputs_of(const std::string& results) {
  auto files = gemt::unpack(results);
  files.erase("summary.meta");
  files.erase(std::string(gemt::kManifestFile));
  return files;
}

struct ClusterRun {
  explicit ClusterRun(const std::string& name, TopologySpec t = small_topology()) {
    root = fixtures::scratch_dir("harness_" + name);
    ClusterOptions o;
    o.topology = std::move(t);
    o.root = root / "cluster";
    cluster = std::make_unique<Cluster>(o);
    cluster->start();
    fs::create_directories(root / "baseline");
    for (auto& [p, c] : fixtures::baseline()) write_file(root / "baseline" / p, *c);
  }
  ~ClusterRun() {
    cluster.reset();
    fs::remove_all(root);
  }
  Uid submit(std::int64_t n) {
    return cluster->session().run_sweep(root / "baseline", "met_hourly.csv", "AirTemp", 0, 10, n);
  }
  client::StatusInfo wait(const Uid& uid) {
    auto s = cluster->session();
    client::StatusInfo st;
    for (int i = 0; i < 6000; ++i) {
      st = s.check_completion(uid);
      if (st.terminal()) break;
      std::this_thread::sleep_for(Millis{10});
    }
    return st;
  }

  fs::path root;
  std::unique_ptr<Cluster> cluster;
};

}  // namespace

TEST(Topology, ParsesAndRoundTrips) {
  auto t = TopologySpec::parse(read_file(fs::path(LAKEGRID_SOURCE_DIR) / "config" / "evaluation.topology"));
  ASSERT_EQ(t.workers.size(), 3u);
  EXPECT_EQ(t.total_slots(), 48u);
  EXPECT_EQ(t.fastest_ms(), 6);
  EXPECT_EQ(t.slowest_ms(), 57);
  auto again = TopologySpec::parse(t.to_text());
  EXPECT_EQ(again.to_text(), t.to_text());
  EXPECT_EQ(t.with_slots(2).total_slots(), 6u);
}

TEST(Topology, RejectsBadLayouts) {
  EXPECT_THROW(TopologySpec::parse("workers = \n"), Error);
  EXPECT_THROW(TopologySpec::parse("workers = a\na.slots = 0\na.duration_ms = 5\n"), Error);
  EXPECT_THROW(TopologySpec::parse("workers = a,a\na.slots = 1\na.duration_ms = 5\n"), Error);
  EXPECT_THROW(TopologySpec::parse("workers = a\na.slots = 1\na.duration_ms = 5\na.nat = WEIRD\n"), Error);
}

TEST(VirtualCluster, SingleSlotIsSerial) {
  VirtualOptions o;
  o.topology = TopologySpec::parse("workers = a\na.slots = 1\na.duration_ms = 10\ngroup_size = 1\n");
  o.sims = 10;
  auto r = run_virtual(o);
  ASSERT_TRUE(r.valid);
  EXPECT_GE(r.makespan.count(), 100);
  EXPECT_LE(r.makespan.count(), 100 + 10 * 2 * o.dispatch_latency.count() + o.heartbeat.count());
  EXPECT_EQ(r.sims_per_worker["a"], 10u);
}

TEST(VirtualCluster, OneRoundWhenSlotsCoverJobs) {
  VirtualOptions o;
  o.topology = TopologySpec::parse("workers = a,b,c\na.slots = 16\na.duration_ms = 40\nb.slots = 16\n"
                                   "b.duration_ms = 40\nc.slots = 16\nc.duration_ms = 40\ngroup_size = 1\n");
  o.sims = 48;
  o.heartbeat = Millis{5};
  auto r = run_virtual(o);
  ASSERT_TRUE(r.valid);
  EXPECT_LE(r.makespan.count(), 50);
  std::uint64_t total = 0;
  for (auto& [w, n] : r.sims_per_worker) total += n;
  EXPECT_EQ(total, 48u);
}

TEST(VirtualCluster, SameSeedSameLog) {
  VirtualOptions o;
  o.topology = small_topology(3, 15);
  o.sims = 200;
  o.jitter = 0.3;
  o.seed = 42;
  o.faults.push_back({FaultKind::WorkerKill, "w2", Millis{100}});
  auto a = run_virtual(o);
  auto b = run_virtual(o);
  EXPECT_EQ(a.event_log, b.event_log);
  EXPECT_EQ(a.makespan, b.makespan);
  o.seed = 43;
  EXPECT_NE(run_virtual(o).event_log, a.event_log);
}

TEST(VirtualCluster, MakespanNeverGrowsWithSlots) {
  auto base = TopologySpec::parse(read_file(fs::path(LAKEGRID_SOURCE_DIR) / "config" / "evaluation.topology"));
  for (std::uint64_t n : {300u, 3000u}) {
    Millis prev = Millis::max();
    for (std::uint32_t s = 1; s <= 16; ++s) {
      VirtualOptions o;
      o.topology = base.with_slots(s);
      o.sims = n;
      auto r = run_virtual(o);
      ASSERT_TRUE(r.valid) << "slots=" << s;
      EXPECT_LE(r.makespan, prev) << "n=" << n << " slots=" << s;
      prev = r.makespan;
    }
  }
}

TEST(VirtualCluster, WorkerKillStillSettlesEveryJob) {
  VirtualOptions o;
  o.topology = small_topology(4, 30);
  o.sims = 300;
  o.faults.push_back({FaultKind::WorkerKill, "w1", Millis{200}});
  auto r = run_virtual(o);
  ASSERT_TRUE(r.valid);
  EXPECT_GT(r.lost_attempts, 0u);
  std::uint64_t total = 0;
  for (auto& [w, n] : r.sims_per_worker) total += n;
  EXPECT_EQ(total, 300u);
}

TEST(Cluster, UnknownFaultTargetIsRejected) {
  ClusterRun run("unknown");
  try {
    run.cluster->schedule_fault({FaultKind::WorkerKill, "nobody", 0, 3});
    FAIL() << "expected a harness error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Harness);
  }
  EXPECT_THROW(run.cluster->schedule_fault({FaultKind::FrameTamper, "ghost", 0, 3}), Error);
  EXPECT_THROW(parse_fault_kind("METEOR"), Error);
  EXPECT_EQ(parse_fault_kind("WORKER_KILL"), FaultKind::WorkerKill);
}

TEST(Cluster, WorkerKillKeepsEverySimExactlyOnce) {
  ClusterRun run("kill");
  run.cluster->schedule_fault({FaultKind::WorkerKill, "w1", 4, 3});
  auto uid = run.submit(100);
  auto st = run.wait(uid);
  ASSERT_EQ(st.state, "COMPLETED") << st.failure_reason;
  auto results = run.cluster->session().fetch_results(uid, {});
  auto sum = summary_of(results);
  EXPECT_EQ(sum["total"], 100);
  EXPECT_EQ(sum["succeeded"], 100);
  std::set<std::string> sims;
  for (auto& [p, c] : outputs_of(results)) sims.insert(p.substr(0, p.find('/')));
  EXPECT_EQ(sims.size(), 100u);
  EXPECT_EQ(run.cluster->faults_applied().size(), 1u);
}

TEST(Cluster, TamperedFramesAreCaughtNotDelivered) {
  std::map<std::string, std::string> clean;
  {
    ClusterRun run("clean");
    auto uid = run.submit(40);
    ASSERT_EQ(run.wait(uid).state, "COMPLETED");
    clean = outputs_of(run.cluster->session().fetch_results(uid, {}));
  }
  ClusterRun run("tamper");
  run.cluster->schedule_fault({FaultKind::FrameTamper, "w1", 0, 3});
  while (run.cluster->faults_applied().empty()) std::this_thread::sleep_for(Millis{5});
  auto uid = run.submit(40);
  ASSERT_EQ(run.wait(uid).state, "COMPLETED");
  EXPECT_GT(run.cluster->frames_tampered(), 0u);
  EXPECT_GT(run.cluster->worker_peer("w1").stats().integrity_failures, 0u);
  EXPECT_EQ(outputs_of(run.cluster->session().fetch_results(uid, {})), clean);
}

TEST(Cluster, ArchiveLossFailsExactlyThatJobsSims) {
  ClusterRun run("loss");
  run.cluster->schedule_fault({FaultKind::ArchiveLoss, "next", 2, 3});
  auto uid = run.submit(30);
  auto st = run.wait(uid);
  ASSERT_EQ(st.state, "FAILED");
  EXPECT_NE(st.failure_reason.find("5 of 30"), std::string::npos) << st.failure_reason;
  auto sum = summary_of(run.cluster->session().fetch_results(uid, {}));
  EXPECT_EQ(sum["succeeded"], 25);
  EXPECT_EQ(sum["failed"], 5);
}

TEST(Replay, SmallBatchEndToEnd) {
  auto t = small_topology(2, 10);
  ReplayOptions o;
  o.root = fixtures::scratch_dir("harness_replay");
  auto r = replay_evaluation(t, {20, 40}, o);
  ASSERT_TRUE(r.valid());
  ASSERT_EQ(r.batches.size(), 2u);
  for (const auto& b : r.batches) {
    std::uint64_t total = 0;
    for (auto& [w, n] : b.sims_per_worker) total += n;
    EXPECT_EQ(total, b.sims);
    EXPECT_GT(b.makespan_ms, 0);
    EXPECT_LT(b.service_response_ms, b.makespan_ms);
  }
  EXPECT_NE(r.to_csv().find("sims_w1"), std::string::npos);
  EXPECT_THROW(replay_evaluation(t, {}, o), Error);
  fs::remove_all(o.root);
}

TEST(Deploy, RealSocketsOnLoopback) {
  auto root = fixtures::scratch_dir("harness_deploy");
  harness::ServerOptions so;
  so.data_root = root / "server";
  so.http_port = 0;
  so.rendezvous_port = 0;
  so.reflector_port = 0;
  so.relay_port = 0;
  so.heartbeat = Millis{250};
  ServerNode server(so);
  server.start();

  WorkerNodeOptions wo;
  wo.peer_id = "udp_worker";
  wo.rendezvous = server.rendezvous_endpoint();
  wo.reflector = server.reflector_endpoint();
  wo.relay = server.relay_endpoint();
  wo.worker.slots = 2;
  wo.worker.scratch_root = root / "worker";
  wo.worker.heartbeat_period = Millis{250};
  WorkerNode node(wo);
  node.start();
  for (int i = 0; i < 500 && server.scheduler().stats().workers_live == 0; ++i) std::this_thread::sleep_for(Millis{10});
  ASSERT_EQ(server.scheduler().stats().workers_live, 1u);

  fs::create_directories(root / "baseline");
  for (auto& [p, c] : fixtures::baseline()) write_file(root / "baseline" / p, *c);
  client::ClientOptions co;
  co.service_url = server.url();
  client::Session session(co);
  auto uid = session.run_sweep(root / "baseline", "met_hourly.csv", "AirTemp", 0, 1, 12);
  client::StatusInfo st;
  for (int i = 0; i < 3000 && !st.terminal(); ++i) {
    st = session.check_completion(uid);
    std::this_thread::sleep_for(Millis{10});
  }
  EXPECT_EQ(st.state, "COMPLETED");
  EXPECT_EQ(summary_of(session.fetch_results(uid, {}))["succeeded"], 12);
  node.stop();
  server.stop();
  fs::remove_all(root);
}

TEST(Deploy, ConfigFilesParse) {
  auto server = ServerOptions::from_kv(KeyValues::parse(read_file(fs::path(LAKEGRID_SOURCE_DIR) / "config" / "server.conf")));
  EXPECT_EQ(server.relay_port, 3480);
  auto worker = WorkerNodeOptions::from_kv(KeyValues::parse(read_file(fs::path(LAKEGRID_SOURCE_DIR) / "config" / "worker.conf")));
  EXPECT_EQ(worker.worker.slots, 16u);
  EXPECT_EQ(worker.rendezvous.str(), "127.0.0.1:5222");
  EXPECT_THROW(WorkerNodeOptions::from_kv(KeyValues::parse("peer_id = bad id!\nrendezvous = 1.2.3.4:5\n")), Error);
}
