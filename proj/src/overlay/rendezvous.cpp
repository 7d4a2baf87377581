#include "lakegrid/overlay/rendezvous.hpp"

#include <nlohmann/json.hpp>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/clock.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/overlay/crypto.hpp"

namespace lakegrid::overlay {

using nlohmann::json;
using namespace std::chrono;

namespace {

milliseconds now_ms() { return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()); }

json descriptor_json(const PeerDescriptor& d) {
  return json{{"peer_id", d.peer_id},
              {"group", d.group},
              {"identity_key", to_hex(d.identity_key)},
              {"fingerprint", to_hex(d.fingerprint)},
              {"reflexive", d.reflexive.str()},
              {"local", d.local.str()},
              {"nat_class", std::string(to_string(d.nat_class))}};
}

PeerDescriptor descriptor_from(const json& j) {
  PeerDescriptor d;
  d.peer_id = j.at("peer_id").get<std::string>();
  d.group = j.at("group").get<std::string>();
  d.identity_key = from_hex(j.at("identity_key").get<std::string>());
  d.fingerprint = from_hex(j.at("fingerprint").get<std::string>());
  d.reflexive = Endpoint::parse(j.at("reflexive").get<std::string>());
  d.local = Endpoint::parse(j.at("local").get<std::string>());
  d.nat_class = parse_nat_class(j.at("nat_class").get<std::string>());
  return d;
}

}  // namespace

std::string PeerDescriptor::to_json() const { return descriptor_json(*this).dump(); }

PeerDescriptor PeerDescriptor::from_json(std::string_view text) {
  try {
    return descriptor_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, std::string("bad peer descriptor: ") + e.what());
  }
}

bool valid_name(std::string_view name) {
  if (name.empty() || name.size() > 64) return false;
  for (char c : name) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
              c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

struct Rendezvous::Conn {
  SignalChannel channel;
  milliseconds last_seen{0};
  std::string group;
  std::string peer_id;  // empty until joined
  bool closing = false;
};

Rendezvous::Rendezvous(std::unique_ptr<DatagramSocket> socket, RendezvousConfig config)
    : config_(config), socket_(std::move(socket)), endpoint_(socket_->local_endpoint()) {
  socket_->set_handler([this](const Endpoint& from, std::string data) {
    loop_.post([this, from, d = std::move(data)]() mutable { on_datagram(from, std::move(d)); });
  });
  loop_.post_after(config_.tick, [this] { tick(); });
}

Rendezvous::~Rendezvous() { stop(); }

void Rendezvous::stop() {
  if (stopped_.exchange(true)) return;
  socket_->close();
  loop_.stop();
}

std::vector<PeerDescriptor> Rendezvous::members(const std::string& group) const {
  std::lock_guard lock(mu_);
  std::vector<PeerDescriptor> out;
  if (auto it = groups_.find(group); it != groups_.end()) {
    for (const auto& [_, m] : it->second) out.push_back(m.descriptor);
  }
  return out;
}

void Rendezvous::set_forward_interceptor(ForwardInterceptor f) {
  std::lock_guard lock(mu_);
  interceptor_ = std::move(f);
}

Rendezvous::Stats Rendezvous::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void Rendezvous::flush(Conn& conn) {
  for (auto& d : conn.channel.poll(now_ms())) socket_->send_to(conn.channel.remote(), std::move(d));
}

void Rendezvous::on_datagram(const Endpoint& from, std::string data) {
  auto kind = wire::kind_of(data);
  if (!kind) return;
  try {
    if (*kind == wire::Kind::Sig) {
      auto seg = wire::decode_sig(data);
      auto it = conns_.find(seg.conn);
      if (it == conns_.end()) {
        auto c = std::make_unique<Conn>(Conn{SignalChannel(seg.conn, from, config_.arq), now_ms(), {}, {}, false});
        it = conns_.emplace(seg.conn, std::move(c)).first;
      }
      auto& conn = *it->second;
      conn.channel.set_remote(from);
      conn.last_seen = now_ms();
      std::string ack;
      auto frames = conn.channel.on_segment(seg, ack);
      socket_->send_to(from, std::move(ack));
      for (const auto& f : frames) {
        on_frame(conn, f);
        if (!conns_.count(seg.conn)) return;
      }
      flush(conn);
    } else if (*kind == wire::Kind::SigAck) {
      auto ack = wire::decode_sig_ack(data);
      if (auto it = conns_.find(ack.conn); it != conns_.end()) {
        it->second->channel.on_ack(ack);
        it->second->last_seen = now_ms();
      }
    }
  } catch (const Error&) {
    // Malformed datagrams are dropped.
  }
}

void Rendezvous::on_frame(Conn& conn, const wire::SigFrame& frame) {
  using wire::SigType;
  switch (frame.type) {
    case SigType::Join: handle_join(conn, frame.body); break;
    case SigType::Ping: conn.channel.send(SigType::Pong, "{}"); break;
    case SigType::Leave:
      if (!conn.peer_id.empty()) {
        auto group = conn.group, peer = conn.peer_id;
        conn.peer_id.clear();
        remove_member(group, peer);
      }
      break;
    case SigType::Forward: handle_forward(conn, frame.body); break;
    default: break;
  }
}

void Rendezvous::handle_join(Conn& conn, const std::string& body) {
  using wire::SigType;
  PeerDescriptor d;
  auto reject = [&](const std::string& reason) {
    {
      std::lock_guard lock(mu_);
      ++stats_.rejects;
    }
    conn.channel.send(SigType::Reject, json{{"reason", reason}}.dump());
  };
  try {
    d = PeerDescriptor::from_json(body);
  } catch (const Error& e) {
    return reject(e.what());
  }
  if (!valid_name(d.peer_id) || !valid_name(d.group)) return reject("invalid peer_id or group name");
  if (d.fingerprint.empty() || fingerprint_of(d.identity_key) != d.fingerprint) {
    return reject("fingerprint does not match identity key");
  }
  {
    std::lock_guard lock(mu_);
    auto& members = groups_[d.group];
    auto existing = members.find(d.peer_id);
    if (existing != members.end() && existing->second.conn != conn.channel.conn()) {
      if (existing->second.descriptor.identity_key != d.identity_key) {
        ++stats_.rejects;
        conn.channel.send(SigType::Reject, json{{"reason", "duplicate peer_id"}}.dump());
        return;
      }
      // Same identity re-registering (e.g. after a lost signaling channel).
      if (auto old = conns_.find(existing->second.conn); old != conns_.end()) {
        old->second->peer_id.clear();
        old->second->closing = true;
      }
    }
    members[d.peer_id] = Member{d, conn.channel.conn()};
    ++stats_.joins;
  }
  conn.group = d.group;
  conn.peer_id = d.peer_id;
  conn.channel.send(SigType::JoinOk, roster_json(d.group));
  push_roster(d.group);
}

void Rendezvous::handle_forward(Conn& conn, const std::string& body) {
  using wire::SigType;
  if (conn.peer_id.empty()) return;
  std::string to, payload;
  try {
    auto j = json::parse(body);
    to = j.at("to").get<std::string>();
    payload = j.at("payload").dump();
  } catch (const json::exception&) {
    return;
  }
  std::uint64_t target_conn = 0;
  ForwardInterceptor intercept;
  {
    std::lock_guard lock(mu_);
    auto& members = groups_[conn.group];
    auto it = members.find(to);
    if (it != members.end()) target_conn = it->second.conn;
    intercept = interceptor_;
    ++stats_.forwards;
  }
  auto target = conns_.find(target_conn);
  if (target_conn == 0 || target == conns_.end()) {
    conn.channel.send(SigType::ForwardFailed, json{{"to", to}, {"reason", "peer not registered"}}.dump());
    return;
  }
  if (intercept && !intercept(conn.peer_id, to, payload)) return;
  json out;
  out["from"] = conn.peer_id;
  try {
    out["payload"] = json::parse(payload);
  } catch (const json::exception&) {
    return;
  }
  target->second->channel.send(SigType::Forwarded, out.dump());
  flush(*target->second);
}

std::string Rendezvous::roster_json(const std::string& group) const {
  std::lock_guard lock(mu_);
  json j;
  j["group"] = group;
  auto v = roster_version_.find(group);
  j["version"] = v == roster_version_.end() ? 0 : v->second;
  j["members"] = json::array();
  if (auto it = groups_.find(group); it != groups_.end()) {
    for (const auto& [_, m] : it->second) j["members"].push_back(descriptor_json(m.descriptor));
  }
  return j.dump();
}

void Rendezvous::push_roster(const std::string& group) {
  std::vector<std::uint64_t> targets;
  {
    std::lock_guard lock(mu_);
    ++roster_version_[group];
    for (const auto& [_, m] : groups_[group]) targets.push_back(m.conn);
  }
  auto body = roster_json(group);
  for (auto c : targets) {
    auto it = conns_.find(c);
    if (it == conns_.end()) continue;
    it->second->channel.send(wire::SigType::Roster, body);
    flush(*it->second);
  }
}

void Rendezvous::remove_member(const std::string& group, const std::string& peer_id) {
  bool removed = false;
  {
    std::lock_guard lock(mu_);
    auto g = groups_.find(group);
    if (g != groups_.end()) removed = g->second.erase(peer_id) > 0;
  }
  if (removed) push_roster(group);
}

void Rendezvous::tick() {
  auto now = now_ms();
  std::vector<std::uint64_t> dead;
  for (auto& [id, conn] : conns_) {
    flush(*conn);
    bool idle_too_long = now - conn->last_seen > config_.member_timeout;
    if (conn->channel.failed() || idle_too_long || (conn->closing && conn->channel.idle())) dead.push_back(id);
  }
  for (auto id : dead) {
    auto it = conns_.find(id);
    auto group = it->second->group, peer = it->second->peer_id;
    conns_.erase(it);
    if (peer.empty()) continue;
    bool owned = false;
    {
      std::lock_guard lock(mu_);
      auto g = groups_.find(group);
      owned = g != groups_.end() && g->second.count(peer) && g->second.at(peer).conn == id;
      if (owned) ++stats_.evictions;
    }
    if (owned) remove_member(group, peer);
  }
  loop_.post_after(config_.tick, [this] { tick(); });
}

}  // namespace lakegrid::overlay
