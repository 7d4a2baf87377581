#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "lakegrid/common/event_log.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/gws/gateway.hpp"
#include "lakegrid/overlay/endpoint.hpp"
#include "lakegrid/overlay/peer.hpp"
#include "lakegrid/overlay/rendezvous.hpp"
#include "lakegrid/overlay/services.hpp"
#include "lakegrid/scheduler/service.hpp"
#include "lakegrid/worker/agent.hpp"

namespace lakegrid::harness {

/// Service side over real UDP: rendezvous, reflector and relay (unless
/// external ones are named), the scheduler peer and the HTTP gateway.
struct ServerOptions {
  std::filesystem::path data_root;
  std::string http_host = "127.0.0.1";
  int http_port = 8080;
  std::string bind_ip = "127.0.0.1";
  // Second reflector address; NAT classification needs two. The reflector
  // also takes reflector_port + 1 on both addresses.
  std::string alt_ip = "127.0.0.2";
  std::uint16_t rendezvous_port = 5222;
  std::uint16_t reflector_port = 3478;
  std::uint16_t relay_port = 3480;
  bool relay = true;
  // External services; when set the local one is not started.
  std::optional<overlay::Endpoint> rendezvous;
  std::optional<overlay::Endpoint> reflector;
  std::optional<overlay::Endpoint> relay_at;
  std::string group = "lakegrid";
  Millis heartbeat{2000};
  std::size_t task_workers = 2;
  std::uint32_t group_size = 10;

  // Keys mirror the fields; endpoints as "ip:port". Throws Error(Validation).
  static ServerOptions from_kv(const KeyValues& kv);
};

class ServerNode {
 public:
  explicit ServerNode(ServerOptions options, EventLog* log = nullptr);
  ~ServerNode();
  ServerNode(const ServerNode&) = delete;
  ServerNode& operator=(const ServerNode&) = delete;

  void start();
  void stop();

  std::string url() const { return gateway_->url(); }
  overlay::Endpoint rendezvous_endpoint() const;
  overlay::Endpoint reflector_endpoint() const;
  std::optional<overlay::Endpoint> relay_endpoint() const;
  scheduler::SchedulerService& scheduler() { return *service_; }
  gws::Gateway& gateway() { return *gateway_; }

 private:
  ServerOptions options_;
  EventLog* log_;
  std::unique_ptr<overlay::Rendezvous> rendezvous_;
  std::unique_ptr<overlay::Reflector> reflector_;
  std::unique_ptr<overlay::Relay> relay_;
  std::unique_ptr<overlay::Peer> peer_;
  std::unique_ptr<scheduler::SchedulerService> service_;
  std::unique_ptr<gws::ResultRecorder> recorder_;
  std::unique_ptr<gws::SchedulerSink> sink_;
  std::unique_ptr<gws::Gateway> gateway_;
};

struct WorkerNodeOptions {
  std::string peer_id;
  std::string group = "lakegrid";
  std::string bind_ip = "127.0.0.1";
  overlay::Endpoint rendezvous;
  overlay::Endpoint reflector;
  std::optional<overlay::Endpoint> relay;
  worker::WorkerConfig worker;
  Millis join_timeout{std::chrono::seconds(30)};

  // Keys: peer_id, group, bind_ip, rendezvous, reflector, relay, plus the
  // worker keys (slots, scratch_root, heartbeat_ms, ...).
  static WorkerNodeOptions from_kv(const KeyValues& kv);
};

class WorkerNode {
 public:
  explicit WorkerNode(WorkerNodeOptions options, EventLog* log = nullptr);
  ~WorkerNode();
  WorkerNode(const WorkerNode&) = delete;
  WorkerNode& operator=(const WorkerNode&) = delete;

  // Retries registration until join_timeout while the rendezvous is
  // unreachable.
  void start();
  void stop();

  worker::WorkerAgent& agent() { return *agent_; }
  overlay::Peer& peer() { return *peer_; }

 private:
  WorkerNodeOptions options_;
  EventLog* log_;
  std::unique_ptr<overlay::Peer> peer_;
  std::unique_ptr<worker::WorkerAgent> agent_;
};

}  // namespace lakegrid::harness
