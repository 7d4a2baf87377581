// Execute node: joins the overlay group and runs jobs for the scheduler.
#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/fs.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/harness/deploy.hpp"

using namespace lakegrid;

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Worker node"};
  std::string config_file, peer_id, rendezvous, reflector, relay, group, scratch;
  int slots = 0;
  app.add_option("--config", config_file, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--peer-id", peer_id, "Name of this worker in the group");
  app.add_option("--rendezvous", rendezvous, "Rendezvous ip:port");
  app.add_option("--reflector", reflector, "Reflector ip:port");
  app.add_option("--relay", relay, "Relay ip:port");
  app.add_option("--group", group, "Overlay group name");
  app.add_option("--slots", slots, "Concurrent simulation slots")->check(CLI::PositiveNumber);
  app.add_option("--scratch", scratch, "Scratch directory, wiped on start");
  CLI11_PARSE(app, argc, argv);

  try {
    KeyValues kv = config_file.empty() ? KeyValues{} : KeyValues::parse(read_file(config_file));
    if (!peer_id.empty()) kv.set("peer_id", peer_id);
    if (!rendezvous.empty()) kv.set("rendezvous", rendezvous);
    if (!reflector.empty()) kv.set("reflector", reflector);
    if (!relay.empty()) kv.set("relay", relay);
    if (!group.empty()) kv.set("group", group);
    if (slots > 0) kv.set("slots", std::to_string(slots));
    if (!scratch.empty()) kv.set("scratch_root", scratch);
    for (const char* key : {"peer_id", "rendezvous", "reflector", "scratch_root"}) {
      if (!kv.has(key)) throw Error(ErrorKind::Validation, std::string(key) + " is required");
    }

    EventLog log;
    harness::WorkerNode node(harness::WorkerNodeOptions::from_kv(kv), &log);
    node.start();
    std::cout << "joined=" << node.peer().peer_id() << " nat=" << overlay::to_string(node.peer().nat_class()) << "\n";
    std::cout.flush();

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(Millis{200});
    node.stop();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
