#include "lakegrid/harness/deploy.hpp"

#include <thread>

#include "lakegrid/common/error.hpp"
#include "lakegrid/overlay/crypto.hpp"

namespace lakegrid::harness {

namespace fs = std::filesystem;
using overlay::Endpoint;
using overlay::UdpSocket;

namespace {

std::optional<Endpoint> endpoint_field(const KeyValues& kv, const std::string& key) {
  auto v = kv.find(key);
  if (!v || v->empty()) return std::nullopt;
  return Endpoint::parse(*v);
}

std::uint16_t port_field(const KeyValues& kv, const std::string& key, std::uint16_t fallback) {
  auto n = kv.get_int_or(key, fallback);
  if (n < 0 || n > 65535) throw Error(ErrorKind::Validation, key + " is not a port");
  return static_cast<std::uint16_t>(n);
}

std::unique_ptr<UdpSocket> bind_udp(const std::string& ip, std::uint16_t port) {
  return std::make_unique<UdpSocket>(Endpoint{overlay::parse_ip(ip), port});
}

std::uint16_t next_port(std::uint16_t p) { return p == 0 ? 0 : static_cast<std::uint16_t>(p + 1); }

}  // namespace

ServerOptions ServerOptions::from_kv(const KeyValues& kv) {
  ServerOptions o;
  o.data_root = kv.get("data_root");
  o.http_host = kv.get_or("http_host", o.http_host);
  o.http_port = static_cast<int>(port_field(kv, "http_port", static_cast<std::uint16_t>(o.http_port)));
  o.bind_ip = kv.get_or("bind_ip", o.bind_ip);
  o.alt_ip = kv.get_or("alt_ip", o.alt_ip);
  o.rendezvous_port = port_field(kv, "rendezvous_port", o.rendezvous_port);
  o.reflector_port = port_field(kv, "reflector_port", o.reflector_port);
  o.relay_port = port_field(kv, "relay_port", o.relay_port);
  o.relay = kv.get_bool_or("relay", o.relay);
  o.rendezvous = endpoint_field(kv, "rendezvous");
  o.reflector = endpoint_field(kv, "reflector");
  o.relay_at = endpoint_field(kv, "relay_at");
  o.group = kv.get_or("group", o.group);
  o.heartbeat = Millis{kv.get_int_or("heartbeat_ms", o.heartbeat.count())};
  o.task_workers = static_cast<std::size_t>(kv.get_int_or("task_workers", 2));
  o.group_size = static_cast<std::uint32_t>(kv.get_int_or("group_size", 10));
  if (o.group_size == 0 || o.task_workers == 0 || o.heartbeat.count() <= 0) {
    throw Error(ErrorKind::Validation, "group_size, task_workers and heartbeat_ms must be positive");
  }
  if (!overlay::valid_name(o.group)) throw Error(ErrorKind::Validation, "bad group name '" + o.group + "'");
  return o;
}

ServerNode::ServerNode(ServerOptions options, EventLog* log) : options_(std::move(options)), log_(log) {
  if (options_.data_root.empty()) throw Error(ErrorKind::Validation, "data_root is required");
}

ServerNode::~ServerNode() { stop(); }

Endpoint ServerNode::rendezvous_endpoint() const {
  return rendezvous_ ? rendezvous_->endpoint() : *options_.rendezvous;
}

Endpoint ServerNode::reflector_endpoint() const { return reflector_ ? reflector_->primary() : *options_.reflector; }

std::optional<Endpoint> ServerNode::relay_endpoint() const {
  if (relay_) return relay_->endpoint();
  return options_.relay_at;
}

void ServerNode::start() {
  const auto& o = options_;
  fs::create_directories(o.data_root);
  if (!o.rendezvous) rendezvous_ = std::make_unique<overlay::Rendezvous>(bind_udp(o.bind_ip, o.rendezvous_port));
  if (!o.reflector) {
    std::array<std::unique_ptr<overlay::DatagramSocket>, 4> sockets;
    sockets[0] = bind_udp(o.bind_ip, o.reflector_port);
    sockets[1] = bind_udp(o.bind_ip, next_port(o.reflector_port));
    sockets[2] = bind_udp(o.alt_ip, o.reflector_port);
    sockets[3] = bind_udp(o.alt_ip, next_port(o.reflector_port));
    reflector_ = std::make_unique<overlay::Reflector>(std::move(sockets));
  }
  if (o.relay && !o.relay_at) relay_ = std::make_unique<overlay::Relay>(bind_udp(o.bind_ip, o.relay_port));

  overlay::PeerConfig pc;
  pc.peer_id = "scheduler";
  pc.group = o.group;
  pc.rendezvous = rendezvous_endpoint();
  pc.reflectors = {reflector_endpoint()};
  pc.relay = relay_endpoint();
  peer_ = std::make_unique<overlay::Peer>(bind_udp(o.bind_ip, 0), overlay::Identity::generate(), pc);
  peer_->start();

  scheduler::ServiceConfig sc;
  sc.core.heartbeat_period = o.heartbeat;
  sc.journal = o.data_root / "scheduler.journal";
  service_ = std::make_unique<scheduler::SchedulerService>(*peer_, sc, log_);
  recorder_ = std::make_unique<gws::ResultRecorder>(o.data_root / "experiments", log_);
  service_->set_settled_handler([this](const scheduler::SchedulerCore::Settled& s) { recorder_->on_settled(s); });
  service_->start();
  sink_ = std::make_unique<gws::SchedulerSink>(*service_);

  gws::GatewayConfig gc;
  gc.data_root = o.data_root / "experiments";
  gc.host = o.http_host;
  gc.port = o.http_port;
  gc.task_workers = o.task_workers;
  gc.gemt.group_size = o.group_size;
  gateway_ = std::make_unique<gws::Gateway>(gc, *sink_, log_);
  gateway_->start();
}

void ServerNode::stop() {
  if (gateway_) gateway_->stop();
  if (service_) service_->stop();
  if (peer_) peer_->stop();
  gateway_.reset();
  sink_.reset();
  service_.reset();
  recorder_.reset();
  peer_.reset();
  if (relay_) relay_->stop();
  if (reflector_) reflector_->stop();
  if (rendezvous_) rendezvous_->stop();
  relay_.reset();
  reflector_.reset();
  rendezvous_.reset();
}

WorkerNodeOptions WorkerNodeOptions::from_kv(const KeyValues& kv) {
  WorkerNodeOptions o;
  o.peer_id = kv.get("peer_id");
  if (!overlay::valid_name(o.peer_id)) throw Error(ErrorKind::Validation, "bad peer_id '" + o.peer_id + "'");
  o.group = kv.get_or("group", o.group);
  o.bind_ip = kv.get_or("bind_ip", o.bind_ip);
  o.rendezvous = Endpoint::parse(kv.get("rendezvous"));
  o.reflector = Endpoint::parse(kv.get("reflector"));
  o.relay = endpoint_field(kv, "relay");
  o.worker = worker::WorkerConfig::from_kv(kv);
  o.join_timeout = Millis{kv.get_int_or("join_timeout_ms", o.join_timeout.count())};
  o.worker.validate();
  return o;
}

WorkerNode::WorkerNode(WorkerNodeOptions options, EventLog* log) : options_(std::move(options)), log_(log) {}

WorkerNode::~WorkerNode() { stop(); }

void WorkerNode::start() {
  overlay::PeerConfig pc;
  pc.peer_id = options_.peer_id;
  pc.group = options_.group;
  pc.rendezvous = options_.rendezvous;
  pc.reflectors = {options_.reflector};
  pc.relay = options_.relay;
  const auto deadline = std::chrono::steady_clock::now() + options_.join_timeout;
  for (;;) {
    peer_ = std::make_unique<overlay::Peer>(bind_udp(options_.bind_ip, 0), overlay::Identity::generate(), pc);
    try {
      peer_->start();
      break;
    } catch (const Error& e) {
      peer_->stop();
      const bool retry = e.kind() == ErrorKind::Transport || e.kind() == ErrorKind::Connectivity;
      if (!retry || std::chrono::steady_clock::now() > deadline) throw;
      std::this_thread::sleep_for(Millis{500});
    }
  }
  agent_ = std::make_unique<worker::WorkerAgent>(*peer_, options_.worker, log_);
  agent_->start();
}

void WorkerNode::stop() {
  if (agent_) agent_->kill();
  if (peer_) peer_->stop();
  agent_.reset();
  peer_.reset();
}

}  // namespace lakegrid::harness
