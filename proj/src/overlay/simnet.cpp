#include "lakegrid/overlay/simnet.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <queue>
#include <random>
#include <set>
#include <thread>

#include "lakegrid/common/error.hpp"

namespace lakegrid::overlay {

namespace {

using SteadyTime = std::chrono::steady_clock::time_point;

struct SocketSlot {
  std::mutex call_mu;  // held while the handler runs; close() takes it too
  DatagramHandler handler;
  bool open = true;
};

struct MappingEntry {
  Endpoint internal;
  std::set<Endpoint> contacted;  // destinations this mapping has sent to
};

struct NatBox {
  NatPolicy policy;
  std::uint32_t public_ip = 0;
  std::map<std::pair<Endpoint, Endpoint>, std::uint16_t> outbound;  // (internal, dst or {}) -> port
  std::map<std::uint16_t, MappingEntry> inbound;
  std::uint16_t next_port = 20000;
  std::mt19937 rng{7};
};

struct Host {
  std::vector<std::uint32_t> ips;
  std::optional<std::size_t> nat;  // index into nats
  bool down = false;
  std::uint16_t next_ephemeral = 40000;
};

struct Pending {
  SteadyTime due;
  std::uint64_t order;
  Packet packet;
  bool operator>(const Pending& o) const { return std::tie(due, order) > std::tie(o.due, o.order); }
};

}  // namespace

struct SimNetwork::Core {
  Options options;
  mutable std::mutex mu;
  std::condition_variable cv;
  std::condition_variable idle_cv;
  std::vector<Host> hosts;
  std::vector<NatBox> nats;
  std::map<std::uint32_t, HostId> public_ip_owner;
  std::map<std::uint32_t, std::size_t> nat_ip_owner;
  std::map<std::uint32_t, HostId> private_ip_owner;
  std::map<Endpoint, std::shared_ptr<SocketSlot>> sockets;
  std::map<std::size_t, Tap> taps;
  std::size_t next_tap = 1;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue;
  std::uint64_t order = 0;
  bool in_flight = false;
  bool stopping = false;
  std::uint32_t next_public = (100u << 24) | (64u << 16) | 1;
  std::uint32_t next_realm = 1;
  std::mt19937_64 loss_rng;
  Stats stats;
  std::thread worker;

  explicit Core(Options o) : options(o), loss_rng(o.seed) {}

  std::uint32_t alloc_public_ip() { return next_public++; }

  HostId host_of_ip(std::uint32_t ip, bool& is_private) const {
    if (auto it = public_ip_owner.find(ip); it != public_ip_owner.end()) {
      is_private = false;
      return it->second;
    }
    if (auto it = private_ip_owner.find(ip); it != private_ip_owner.end()) {
      is_private = true;
      return it->second;
    }
    throw Error(ErrorKind::Internal, "unknown simulated address");
  }

  std::uint16_t allocate_port(NatBox& nat) {
    if (nat.policy.ports == PortAllocation::Sequential) {
      while (nat.inbound.count(nat.next_port)) ++nat.next_port;
      return nat.next_port++;
    }
    std::uniform_int_distribution<int> d(20000, 60000);
    for (;;) {
      auto p = static_cast<std::uint16_t>(d(nat.rng));
      if (!nat.inbound.count(p)) return p;
    }
  }

  // Outbound translation; returns false if the packet cannot leave.
  bool translate_out(Packet& p) {
    bool is_private = false;
    auto src_host = host_of_ip(p.src.ip, is_private);
    const Host& h = hosts[src_host];
    if (h.down) {
      ++stats.host_down;
      return false;
    }
    if (!h.nat) return true;
    // Same-realm traffic does not touch the NAT.
    if (auto it = private_ip_owner.find(p.dst.ip); it != private_ip_owner.end()) {
      return hosts[it->second].nat == h.nat;
    }
    auto& nat = nats[*h.nat];
    auto key = nat.policy.mapping == Mapping::EndpointIndependent ? std::make_pair(p.src, Endpoint{})
                                                                   : std::make_pair(p.src, p.dst);
    auto it = nat.outbound.find(key);
    std::uint16_t port;
    if (it == nat.outbound.end()) {
      port = allocate_port(nat);
      nat.outbound.emplace(key, port);
      nat.inbound[port].internal = p.src;
    } else {
      port = it->second;
    }
    nat.inbound[port].contacted.insert(p.dst);
    p.src = Endpoint{nat.public_ip, port};
    return true;
  }

  // Inbound translation and filtering; returns the socket to deliver to.
  std::shared_ptr<SocketSlot> route_in(Packet& p) {
    Endpoint target = p.dst;
    if (auto nit = nat_ip_owner.find(p.dst.ip); nit != nat_ip_owner.end()) {
      auto& nat = nats[nit->second];
      auto m = nat.inbound.find(p.dst.port);
      if (m == nat.inbound.end()) {
        ++stats.unroutable;
        return nullptr;
      }
      bool allowed = false;
      switch (nat.policy.filtering) {
        case Filtering::None: allowed = true; break;
        case Filtering::Address:
          for (const auto& c : m->second.contacted) allowed = allowed || c.ip == p.src.ip;
          break;
        case Filtering::AddressAndPort: allowed = m->second.contacted.count(p.src) != 0; break;
      }
      if (!allowed) {
        ++stats.filtered;
        return nullptr;
      }
      target = m->second.internal;
    } else if (!public_ip_owner.count(p.dst.ip) && !private_ip_owner.count(p.dst.ip)) {
      ++stats.unroutable;
      return nullptr;
    }
    bool is_private = false;
    auto host = host_of_ip(target.ip, is_private);
    if (hosts[host].down) {
      ++stats.host_down;
      return nullptr;
    }
    auto s = sockets.find(target);
    if (s == sockets.end()) {
      ++stats.unroutable;
      return nullptr;
    }
    p.dst = target;
    return s->second;
  }

  void run() {
    std::unique_lock lock(mu);
    for (;;) {
      if (stopping) return;
      if (queue.empty()) {
        idle_cv.notify_all();
        cv.wait(lock);
        continue;
      }
      auto due = queue.top().due;
      if (due > std::chrono::steady_clock::now()) {
        cv.wait_until(lock, due);
        continue;
      }
      Packet p = std::move(const_cast<Pending&>(queue.top()).packet);
      queue.pop();
      auto slot = route_in(p);
      if (!slot) continue;
      ++stats.delivered;
      in_flight = true;
      lock.unlock();
      {
        std::lock_guard call(slot->call_mu);
        if (slot->open && slot->handler) slot->handler(p.src, std::move(p.data));
      }
      lock.lock();
      in_flight = false;
    }
  }

  void send(const Endpoint& from, const Endpoint& to, std::string data) {
    Packet p{from, to, std::move(data)};
    std::vector<Tap> tap_copy;
    {
      std::lock_guard lock(mu);
      if (stopping) return;
      ++stats.sent;
      if (!translate_out(p)) return;
      for (const auto& [_, t] : taps) tap_copy.push_back(t);
    }
    for (const auto& t : tap_copy) {
      if (t(p) == TapVerdict::Drop) {
        std::lock_guard lock(mu);
        ++stats.tapped;
        return;
      }
    }
    std::lock_guard lock(mu);
    if (options.loss > 0 && std::uniform_real_distribution<double>(0, 1)(loss_rng) < options.loss) {
      ++stats.lost;
      return;
    }
    auto due = std::chrono::steady_clock::now() + std::chrono::milliseconds(options.latency_ms);
    queue.push(Pending{due, order++, std::move(p)});
    cv.notify_all();
  }
};

namespace {

class SimSocket final : public DatagramSocket {
 public:
  SimSocket(std::shared_ptr<SimNetwork::Core> core, Endpoint local, std::shared_ptr<SocketSlot> slot)
      : core_(std::move(core)), local_(local), slot_(std::move(slot)) {}
  ~SimSocket() override { close(); }

  Endpoint local_endpoint() const override { return local_; }
  void send_to(const Endpoint& to, std::string data) override {
    if (closed_) return;
    core_->send(local_, to, std::move(data));
  }
  void set_handler(DatagramHandler handler) override {
    std::lock_guard call(slot_->call_mu);
    slot_->handler = std::move(handler);
  }
  void close() override {
    if (closed_.exchange(true)) return;
    {
      std::lock_guard lock(core_->mu);
      core_->sockets.erase(local_);
    }
    std::lock_guard call(slot_->call_mu);
    slot_->open = false;
    slot_->handler = nullptr;
  }

 private:
  std::shared_ptr<SimNetwork::Core> core_;
  Endpoint local_;
  std::shared_ptr<SocketSlot> slot_;
  std::atomic<bool> closed_{false};
};

}  // namespace

SimNetwork::SimNetwork() : SimNetwork(Options{}) {}

SimNetwork::SimNetwork(Options options) : core_(std::make_shared<Core>(options)) {
  core_->worker = std::thread([c = core_.get()] { c->run(); });
}

SimNetwork::~SimNetwork() { stop(); }

void SimNetwork::stop() {
  {
    std::lock_guard lock(core_->mu);
    if (core_->stopping) return;
    core_->stopping = true;
    core_->cv.notify_all();
  }
  if (core_->worker.joinable()) core_->worker.join();
}

SimNetwork::HostId SimNetwork::add_public_host(std::size_t address_count) {
  std::lock_guard lock(core_->mu);
  Host h;
  auto id = static_cast<HostId>(core_->hosts.size());
  for (std::size_t i = 0; i < std::max<std::size_t>(1, address_count); ++i) {
    auto ip = core_->alloc_public_ip();
    h.ips.push_back(ip);
    core_->public_ip_owner[ip] = id;
  }
  core_->hosts.push_back(std::move(h));
  return id;
}

SimNetwork::HostId SimNetwork::add_host(const NatPolicy& policy) {
  policy.validate();
  if (policy.nat_class == NatClass::Open) return add_public_host(1);
  std::lock_guard lock(core_->mu);
  NatBox nat;
  nat.policy = policy;
  nat.public_ip = core_->alloc_public_ip();
  nat.rng.seed(static_cast<unsigned>(core_->options.seed + core_->nats.size()));
  auto nat_index = core_->nats.size();
  core_->nat_ip_owner[nat.public_ip] = nat_index;
  core_->nats.push_back(std::move(nat));

  auto realm = core_->next_realm++;
  std::uint32_t ip = (10u << 24) | ((realm & 0xffff) << 8) | 2u;
  Host h;
  h.ips.push_back(ip);
  h.nat = nat_index;
  auto id = static_cast<HostId>(core_->hosts.size());
  core_->private_ip_owner[ip] = id;
  core_->hosts.push_back(std::move(h));
  return id;
}

std::vector<std::uint32_t> SimNetwork::addresses(HostId host) const {
  std::lock_guard lock(core_->mu);
  return core_->hosts.at(host).ips;
}

std::optional<NatPolicy> SimNetwork::nat_policy(HostId host) const {
  std::lock_guard lock(core_->mu);
  const auto& h = core_->hosts.at(host);
  if (!h.nat) return std::nullopt;
  return core_->nats[*h.nat].policy;
}

std::unique_ptr<DatagramSocket> SimNetwork::open(HostId host, std::uint16_t port, std::size_t address_index) {
  std::lock_guard lock(core_->mu);
  auto& h = core_->hosts.at(host);
  if (address_index >= h.ips.size()) throw Error(ErrorKind::Validation, "host has no such address");
  Endpoint local{h.ips[address_index], port};
  if (port == 0) {
    do {
      local.port = h.next_ephemeral++;
    } while (core_->sockets.count(local));
  }
  if (core_->sockets.count(local)) throw Error(ErrorKind::Conflict, "address in use: " + local.str());
  auto slot = std::make_shared<SocketSlot>();
  core_->sockets[local] = slot;
  return std::make_unique<SimSocket>(core_, local, slot);
}

void SimNetwork::set_host_down(HostId host, bool down) {
  std::lock_guard lock(core_->mu);
  core_->hosts.at(host).down = down;
}

std::size_t SimNetwork::add_tap(Tap tap) {
  std::lock_guard lock(core_->mu);
  auto id = core_->next_tap++;
  core_->taps[id] = std::move(tap);
  return id;
}

void SimNetwork::remove_tap(std::size_t id) {
  std::lock_guard lock(core_->mu);
  core_->taps.erase(id);
}

SimNetwork::Stats SimNetwork::stats() const {
  std::lock_guard lock(core_->mu);
  return core_->stats;
}

void SimNetwork::drain() {
  std::unique_lock lock(core_->mu);
  core_->idle_cv.wait(lock, [&] { return core_->stopping || (core_->queue.empty() && !core_->in_flight); });
}

}  // namespace lakegrid::overlay
