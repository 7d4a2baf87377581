// Experiment service in deployment mode: HTTP gateway, scheduler and the
// overlay services (rendezvous, reflector, relay) over real UDP.
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
  CLI::App app{"Experiment service"};
  std::string config_file, data_root, rendezvous, relay, group;
  int http_port = -1;
  app.add_option("--config", config_file, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--data-root", data_root, "Where experiments and the scheduler journal live");
  app.add_option("--http-port", http_port, "Gateway port, 0 for any");
  app.add_option("--rendezvous", rendezvous, "Use an external rendezvous at ip:port");
  app.add_option("--relay", relay, "Use an external relay at ip:port");
  app.add_option("--group", group, "Overlay group name");
  CLI11_PARSE(app, argc, argv);

  try {
    KeyValues kv = config_file.empty() ? KeyValues{} : KeyValues::parse(read_file(config_file));
    if (!data_root.empty()) kv.set("data_root", data_root);
    if (http_port >= 0) kv.set("http_port", std::to_string(http_port));
    if (!rendezvous.empty()) kv.set("rendezvous", rendezvous);
    if (!relay.empty()) kv.set("relay_at", relay);
    if (!group.empty()) kv.set("group", group);
    if (!kv.has("data_root")) throw Error(ErrorKind::Validation, "--data-root or data_root is required");

    EventLog log;
    harness::ServerNode server(harness::ServerOptions::from_kv(kv), &log);
    server.start();
    std::cout << "url=" << server.url() << "\n"
              << "rendezvous=" << server.rendezvous_endpoint().str() << "\n"
              << "reflector=" << server.reflector_endpoint().str() << "\n";
    if (auto r = server.relay_endpoint()) std::cout << "relay=" << r->str() << "\n";
    std::cout.flush();

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(Millis{200});
    server.stop();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
