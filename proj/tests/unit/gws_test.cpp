#include <gtest/gtest.h>

#include <httplib.h>

#include <nlohmann/json.hpp>
#include <thread>

#include "../support/fixtures.hpp"
#include "../support/gateway_env.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/gemt/archive.hpp"
#include "lakegrid/gws/gateway.hpp"
#include "lakegrid/gws/upload.hpp"
#include "lakegrid/model/lake_model.hpp"

using namespace lakegrid;
using namespace lakegrid::gws;
using namespace std::chrono_literals;
using json = nlohmann::json;
using lakegrid::fixtures::GatewayEnv;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> top_dirs(const std::string& archive) {
  std::set<std::string> dirs;
  for (const auto& p : gemt::ArchiveReader(archive).paths()) {
    if (auto s = p.find('/'); s != std::string::npos) dirs.insert(p.substr(0, s));
  }
  return {dirs.begin(), dirs.end()};
}

}  // namespace

TEST(GwsUpload, AllowlistAndSniffing) {
  EXPECT_TRUE(looks_executable("#!/bin/sh\n"));
  EXPECT_TRUE(looks_executable(std::string("\x7f" "ELF\x02", 5)));
  EXPECT_TRUE(looks_executable("MZ\x90"));
  EXPECT_FALSE(looks_executable("time,AirTemp\n0,1\n"));
  auto screen = [](std::map<std::string, std::string> files) { return screen_upload(gemt::pack(files), 1 << 20); };
  EXPECT_NO_THROW(screen({{"a/lake.nml", "x = 1\n"}, {"a/met.csv", "t\n"}, {"a/notes.txt", "hi"}}));
  for (auto bad : std::vector<std::map<std::string, std::string>>{
           {{"a/run.sh", "echo hi"}},
           {{"a/tool.exe", "data"}},
           {{"a/Makefile", "all:"}},
           {{"a/met.csv", "#!/usr/bin/env python\nprint(1)"}},
           {{"a/lake.nml", std::string("\xcf\xfa\xed\xfe", 4)}}}) {
    try {
      screen(bad);
      ADD_FAILURE() << bad.begin()->first;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Policy) << bad.begin()->first;
    }
  }
  try {
    screen_upload("not an archive", 1 << 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
  try {
    screen_upload(gemt::pack({{"a/big.csv", std::string(4096, 'x')}}), 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
}

TEST(GwsUpload, SimsFollowNaturalDirectoryOrder) {
  auto base = fixtures::baseline();
  std::map<std::string, std::string> files;
  for (auto name : {"run10", "run2", "run1"}) {
    for (auto& [f, c] : base) files[std::string(name) + "/" + f] = *c;
  }
  files["run10/marker.txt"] = "ten";
  auto sims = sims_from_upload(files);
  ASSERT_EQ(sims.size(), 3u);
  EXPECT_EQ(sims[2].sim_id, 2u);
  EXPECT_TRUE(sims[2].input_files.count("marker.txt"));
  EXPECT_THROW(sims_from_upload({{"lake.nml", "x"}}), Error);
  EXPECT_THROW(sims_from_upload({{"a/met.csv", "t\n"}}), Error);  // no parameter file
}

TEST(GwsStore, TaskQueueIsDurableAndKindOrdered) {
  auto root = fixtures::scratch_dir("gws_store");
  Uid uid = Uid::generate();
  {
    ExperimentStore store(root);
    ExperimentRecord rec(uid);
    rec.created_at = wall_now();
    store.create(rec);
    EXPECT_THROW(store.create(ExperimentRecord(uid)), Error);
    TaskQueue q(store);
    q.enqueue(uid, TaskKind::Collate);
    q.enqueue(uid, TaskKind::Generate);
  }
  ExperimentStore store(root);
  TaskQueue q(store);
  auto p = q.pending(uid);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].kind, TaskKind::Generate);
  EXPECT_EQ(p[1].kind, TaskKind::Collate);
  q.remove(p[0]);
  EXPECT_EQ(q.pending().size(), 1u);
  try {
    store.load(Uid::generate());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotFound);
  }
  EXPECT_EQ(store.prune(0ms, wall_now() + 1h), 0u);  // not terminal
  store.update(uid, [](ExperimentRecord& r) { r.state = ExperimentState::Aborted; });
  EXPECT_EQ(store.prune(1h, wall_now()), 0u);  // too young
  EXPECT_EQ(store.prune(1h, wall_now() + 2h), 1u);
  EXPECT_FALSE(store.exists(uid));
  fs::remove_all(root);
}

TEST(GwsGateway, ThreeSimUploadCompletes) {
  GatewayEnv env("three");
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(3)));
  EXPECT_EQ(uid.size(), 40u);
  auto s = env.wait_terminal(uid);
  EXPECT_EQ(s["state"], "COMPLETED");
  EXPECT_EQ(s["sims"], 3);
  EXPECT_EQ(s["fraction"], 1.0);
  auto full = env.results(uid);
  EXPECT_EQ(top_dirs(full), (std::vector<std::string>{"0", "1", "2"}));
  // Fetching twice gives the same bytes.
  EXPECT_EQ(env.results(uid), full);
}

TEST(GwsGateway, ExecutableUploadRejectedAndNeverRun) {
  GatewayEnv env("policy");
  const auto canary = env.root / "canary";
  auto sims = fixtures::sims(2);
  std::map<std::string, std::string> files;
  for (const auto& sm : sims) {
    for (auto& [n, c] : sm.input_files) files["sim" + std::to_string(sm.sim_id) + "/" + n] = *c;
  }
  // Negative control: the same upload without the script is accepted.
  env.post_upload(gemt::pack(files));
  const auto before = env.gw->store().list().size();

  files["sim0/run.sh"] = "#!/bin/sh\ntouch " + canary.string() + "\n";
  auto body = env.post_upload(gemt::pack(files), 403);
  EXPECT_NE(body.find("run.sh"), std::string::npos);
  files.erase("sim0/run.sh");
  files["sim0/setup.txt"] = "#!/bin/sh\ntouch " + canary.string() + "\n";
  env.post_upload(gemt::pack(files), 403);

  std::this_thread::sleep_for(300ms);
  EXPECT_FALSE(fs::exists(canary));
  EXPECT_EQ(env.gw->store().list().size(), before);
  env.post_upload("garbage", 400);
}

TEST(GwsGateway, OversizeUploadIs413) {
  GatewayEnv env("cap", [](GatewayConfig& c) { c.max_upload_bytes = 1024; });
  auto res = env.cli->Post("/experiment", std::string(4096, 'x'), "application/octet-stream");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
}

TEST(GwsGateway, SweepOfTenThousand) {
  GatewayEnv env("sweep10k");
  env.sink->pause(true);
  auto uid = env.post_sweep(
      "driver_file = met_hourly.csv\nvariable = AirTemp\nstart_value = -10\nend_value = 30\ncount = 10000\n");
  env.wait_state(uid, "RUNNING");
  auto s = env.status(uid);
  EXPECT_EQ(s["sims"], 10000);
  EXPECT_EQ(s["metrics"]["jobs_total"], 1000);
  EXPECT_EQ(env.sink->submitted().size(), 1000u);
  auto index = json::parse(read_file(env.gw->store().jobs_dir(Uid::parse(uid)) / "index.json"));
  std::set<std::uint64_t> ids;
  for (auto& [job, sims] : index.items()) {
    for (auto id : sims) EXPECT_TRUE(ids.insert(id.get<std::uint64_t>()).second);
  }
  EXPECT_EQ(ids.size(), 10000u);
  EXPECT_EQ(*ids.rbegin(), 9999u);
  auto res = env.cli->Post("/experiment/" + uid + "/abort", "", "text/plain");
  EXPECT_EQ(res->status, 200);
}

TEST(GwsGateway, SingleCountSweepIsBaselinePlusStart) {
  GatewayEnv env("count1");
  auto uid = env.post_sweep("driver_file = met_hourly.csv\nvariable = AirTemp\nstart_value = 2.5\nend_value = 9\ncount = 1\n");
  EXPECT_EQ(env.wait_terminal(uid)["state"], "COMPLETED");
  auto inputs = env.job_inputs(uid);
  ASSERT_TRUE(inputs.count("0/met_hourly.csv"));
  EXPECT_EQ(inputs.size(), 2u);
  auto base = fixtures::csv_column(*fixtures::baseline().at("met_hourly.csv"), "AirTemp");
  auto got = fixtures::csv_column(inputs["0/met_hourly.csv"], "AirTemp");
  ASSERT_EQ(got.size(), base.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], base[i] + 2.5);
  EXPECT_EQ(fixtures::csv_column(inputs["0/met_hourly.csv"], "Wind"),
            fixtures::csv_column(*fixtures::baseline().at("met_hourly.csv"), "Wind"));
}

TEST(GwsGateway, UnknownVariableFailsAsynchronously) {
  GatewayEnv env("unknownvar");
  auto uid = env.post_sweep("driver_file = met_hourly.csv\nvariable = Snowfall\nstart_value = 0\nend_value = 1\ncount = 3\n");
  auto s = env.wait_terminal(uid);
  EXPECT_EQ(s["state"], "FAILED");
  EXPECT_NE(s["failure_reason"].get<std::string>().find("Snowfall"), std::string::npos);
  auto res = env.cli->Get("/experiment/" + uid + "/results");
  EXPECT_EQ(res->status, 409);
}

TEST(GwsGateway, DegenerateUniformReproducesBaseline) {
  GatewayEnv env("uniform0");
  auto res = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description",
                           "driver_file = met_hourly.csv\nvariable = AirTemp\ndistribution = uniform\na = 0\nb = 0\n"
                           "operation = add\ncount = 5\n");
  ASSERT_EQ(res->status, 202) << res->body;
  auto uid = json::parse(res->body)["uid"].get<std::string>();
  EXPECT_EQ(env.wait_terminal(uid)["state"], "COMPLETED");
  auto inputs = env.job_inputs(uid);
  auto base = fixtures::csv_column(*fixtures::baseline().at("met_hourly.csv"), "AirTemp");
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(fixtures::csv_column(inputs.at(std::to_string(i) + "/met_hourly.csv"), "AirTemp"), base);
  }
  auto all = gemt::unpack(env.results(uid));
  for (int i = 1; i < 5; ++i) {
    EXPECT_EQ(all.at(std::to_string(i) + "/lake_output.csv"), all.at("0/lake_output.csv"));
  }
}

TEST(GwsGateway, PoissonSeedIsRecordedAndReproducible) {
  GatewayEnv env("poisson");
  env.sink->pause(true);
  const std::string desc =
      "driver_file = met_hourly.csv\nvariable = AirTemp\ndistribution = poisson\nlambda = 3\n"
      "operation = subtract\ncount = 100\n";
  auto r1 = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description", desc);
  auto uid1 = json::parse(r1->body)["uid"].get<std::string>();
  env.wait_state(uid1, "RUNNING");
  auto seed = env.status(uid1)["seed"].get<std::string>();
  auto r2 = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description", desc + "seed = " + seed + "\n");
  auto uid2 = json::parse(r2->body)["uid"].get<std::string>();
  env.wait_state(uid2, "RUNNING");
  auto a = env.job_inputs(uid1), b = env.job_inputs(uid2);
  EXPECT_EQ(a.size(), 200u);
  EXPECT_EQ(a, b);
  auto r3 = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description", desc + "seed = 99\n");
  auto uid3 = json::parse(r3->body)["uid"].get<std::string>();
  env.wait_state(uid3, "RUNNING");
  EXPECT_NE(env.job_inputs(uid3), a);
}

TEST(GwsGateway, SampledValidationIsSynchronous) {
  GatewayEnv env("sampledbad");
  auto res = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description",
                           "driver_file = met_hourly.csv\nvariable = AirTemp\ndistribution = uniform\na = -1\nb = 1\n"
                           "operation = divide\ncount = 10\n");
  EXPECT_EQ(res->status, 400);
  EXPECT_NE(res->body.find("zero"), std::string::npos);
  res = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "description",
                      "driver_file = met_hourly.csv\nvariable = AirTemp\ndistribution = poisson\ncount = 10\n");
  EXPECT_EQ(res->status, 400);
  EXPECT_NE(res->body.find("lambda"), std::string::npos);
  res = env.post_form("/experiment/sampled", fixtures::baseline_archive(), "nothing", "x");
  EXPECT_EQ(res->status, 400);
  EXPECT_TRUE(env.gw->store().list().empty());
}

TEST(GwsGateway, StatusFractionFromSettledJobs) {
  GatewayEnv env("fraction");
  env.sink->pause(true);
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(40)));
  env.wait_state(uid, "RUNNING");
  EXPECT_EQ(env.status(uid)["metrics"]["jobs_total"], 4);
  auto res = env.cli->Get("/experiment/" + uid + "/results");
  ASSERT_EQ(res->status, 409);
  EXPECT_EQ(json::parse(res->body)["fraction"], 0.0);
  gemt::JobResult fake;
  fake.job_id = JobId{Uid::parse(uid), 0}.str();
  fake.job_ok = true;
  env.recorder->on_settled({JobId{Uid::parse(uid), 0}, true, share(gemt::result_archive(fake)), ""});
  env.recorder->on_settled({JobId{Uid::parse(uid), 0}, true, share(gemt::result_archive(fake)), ""});
  EXPECT_EQ(env.status(uid)["fraction"], 0.25);
  EXPECT_EQ(env.cli->Get("/experiment/" + Uid::generate().str() + "/status")->status, 404);
  EXPECT_EQ(env.cli->Get("/experiment/abc/status")->status, 400);
}

TEST(GwsGateway, ColumnSubsetIsSmallerAndExact) {
  GatewayEnv env("subset");
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(3)));
  ASSERT_EQ(env.wait_terminal(uid)["state"], "COMPLETED");
  auto full = env.results(uid);
  auto sub = env.results(uid, "?sims=0&columns=temp_surface");
  EXPECT_LT(sub.size(), full.size());
  gemt::ArchiveReader r(sub);
  EXPECT_EQ(top_dirs(sub), std::vector<std::string>{"0"});
  // Oracle: surface column of the full table is its first layer.
  auto whole = model::LakeOutput::parse_csv(gemt::ArchiveReader(full).read("0/lake_output.csv"));
  auto t = model::FeatureTable::parse_csv(r.read("0/lake_output.csv"));
  EXPECT_EQ(t.header, std::vector<std::string>{"temp_surface"});
  ASSERT_EQ(t.rows.size(), whole.temps.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_DOUBLE_EQ(*parse_double(t.rows[i][0]), whole.temps[i][0]);
  EXPECT_EQ(env.cli->Get("/experiment/" + uid + "/results?columns=salinity")->status, 400);
  EXPECT_EQ(env.cli->Get("/experiment/" + uid + "/results?sims=x")->status, 400);
}

TEST(GwsGateway, AbortTwiceConflicts) {
  GatewayEnv env("abort2");
  env.sink->pause(true);
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(5)));
  env.wait_state(uid, "RUNNING");
  EXPECT_EQ(env.cli->Post("/experiment/" + uid + "/abort", "", "text/plain")->status, 200);
  EXPECT_EQ(env.cli->Post("/experiment/" + uid + "/abort", "", "text/plain")->status, 409);
  env.sink->pause(false);
  std::this_thread::sleep_for(200ms);
  EXPECT_TRUE(env.sink->started().empty());
  EXPECT_EQ(env.status(uid)["state"], "ABORTED");
  // No dispatch recorded after the abort.
  bool after = false;
  for (const auto& e : env.log.snapshot()) {
    if (e.kind == "abort") after = true;
    if (after) {
      EXPECT_NE(e.kind, "job_submitted");
    }
  }
  EXPECT_TRUE(after);
}

TEST(GwsGateway, AbortWhileGeneratingDispatchesNothing) {
  std::promise<void> aborted;
  auto gate = aborted.get_future().share();
  GatewayEnv env("abortgen", [gate](GatewayConfig& c) {
    c.before_task = [gate](const Uid&, TaskKind k) {
      if (k == TaskKind::Generate) gate.wait();
    };
  });
  auto uid = env.post_sweep("driver_file = met_hourly.csv\nvariable = AirTemp\nstart_value = 0\nend_value = 1\ncount = 500\n");
  env.wait_state(uid, "SUBMITTED");
  EXPECT_EQ(env.cli->Post("/experiment/" + uid + "/abort", "", "text/plain")->status, 200);
  aborted.set_value();
  std::this_thread::sleep_for(300ms);
  EXPECT_TRUE(env.sink->submitted().empty());
  EXPECT_EQ(env.status(uid)["state"], "ABORTED");
  EXPECT_TRUE(TaskQueue(env.gw->store()).pending().empty());
}

TEST(GwsGateway, RestartKeepsEveryAnswer) {
  GatewayEnv env("restart");
  env.sink->pause(true);
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(30)));
  // Kill right after submit: generation may be cut short and must resume.
  env.restart();
  env.wait_state(uid, "RUNNING");
  auto before = env.cli->Get("/experiment/" + uid + "/status")->body;
  env.restart();
  EXPECT_EQ(env.cli->Get("/experiment/" + uid + "/status")->body, before);
  env.sink->pause(false);
  ASSERT_EQ(env.wait_terminal(uid)["state"], "COMPLETED");
  auto status_done = env.cli->Get("/experiment/" + uid + "/status")->body;
  auto full = env.results(uid);
  auto sub = env.results(uid, "?sims=1,2&columns=temp_mean");
  env.restart();
  EXPECT_EQ(env.cli->Get("/experiment/" + uid + "/status")->body, status_done);
  EXPECT_EQ(env.results(uid), full);
  EXPECT_EQ(env.results(uid, "?sims=1,2&columns=temp_mean"), sub);
  EXPECT_EQ(top_dirs(full).size(), 30u);
}

TEST(GwsGateway, CollationWaitsForGatewayAfterOfflineResults) {
  GatewayEnv env("offline");
  env.sink->pause(true);
  auto uid = env.post_upload(fixtures::upload_archive(fixtures::sims(12)));
  env.wait_state(uid, "RUNNING");
  env.gw->stop();
  // Results land while no gateway is up.
  env.sink->pause(false);
  for (int i = 0; i < 500 && env.sink->queue_depth() > 0; ++i) std::this_thread::sleep_for(10ms);
  std::this_thread::sleep_for(300ms);
  env.start();
  EXPECT_EQ(env.wait_terminal(uid)["state"], "COMPLETED");
}

TEST(GwsGateway, AnswersBeforeGenerationFinishes) {
  GatewayEnv env("async");
  env.sink->pause(true);
  auto archive = fixtures::upload_archive(fixtures::sims(1000));
  auto t0 = std::chrono::steady_clock::now();
  auto uid = env.post_upload(archive);
  double client_ms = elapsed_ms(t0);
  env.wait_state(uid, "RUNNING");
  auto m = env.status(uid)["metrics"];
  EXPECT_LT(m["service_response_ms"].get<double>(), m["input_processing_ms"].get<double>());
  EXPECT_LT(client_ms, 2000);
  // Order in the gateway's own log.
  std::int64_t returned = -1, generated = -1;
  for (const auto& e : env.log.snapshot()) {
    if (e.kind == "uid_returned") returned = static_cast<std::int64_t>(e.seq);
    if (e.kind == "generated") generated = static_cast<std::int64_t>(e.seq);
  }
  EXPECT_GE(returned, 0);
  EXPECT_GT(generated, returned);
  auto health = json::parse(env.cli->Get("/service/health")->body);
  EXPECT_EQ(health["queue_depth"], 100);
  EXPECT_EQ(health["workers_live"], 2);
}
