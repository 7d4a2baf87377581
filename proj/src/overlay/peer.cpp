#include "lakegrid/overlay/peer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"
#include "lakegrid/common/random.hpp"
#include "lakegrid/overlay/wire.hpp"

namespace lakegrid::overlay {

using nlohmann::json;
using namespace std::chrono;

namespace {

milliseconds now_ms() { return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()); }

constexpr milliseconds kAllocRetry{100};

std::string ctrl(wire::Ctrl c, std::string_view body = {}) {
  std::string s(1, static_cast<char>(c));
  s.append(body);
  return s;
}

std::string u64_bytes(std::uint64_t v) {
  ByteWriter w;
  w.u64(v);
  return w.take();
}

std::uint64_t nonzero_random() {
  std::uint64_t v = 0;
  while (v == 0) v = secure_random_u64();
  return v;
}

}  // namespace

std::string_view to_string(LinkKind k) { return k == LinkKind::Direct ? "DIRECT" : "RELAYED"; }

struct Peer::Link {
  enum class Phase { Offered, Punching, Allocating, Up };

  explicit Link(const ArqConfig& c) : tx(c), rx(c.window) {}

  std::uint64_t id = 0;
  std::string remote;
  bool initiator = false;
  Phase phase = Phase::Offered;
  EphemeralKeys eph;
  SessionKeys keys;
  bool keyed = false;
  std::vector<Endpoint> candidates;
  std::optional<Endpoint> direct;
  bool punch_acked = false;
  LinkKind kind = LinkKind::Direct;
  bool relay_ok = false;
  milliseconds started{0};
  milliseconds punch_started{0};
  milliseconds last_punch{0};
  milliseconds last_alloc{0};
  ArqSender tx;
  ArqReceiver rx;
  std::uint64_t reported_retx = 0;
  std::vector<std::shared_ptr<std::promise<LinkInfo>>> waiters;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t integrity_failures = 0;
};

Peer::Peer(std::unique_ptr<DatagramSocket> socket, Identity identity, PeerConfig config)
    : config_(std::move(config)), identity_(std::move(identity)), socket_(std::move(socket)) {
  local_ = socket_->local_endpoint();
  socket_->set_handler([this](const Endpoint& from, std::string data) {
    if (wire::kind_of(data) == wire::Kind::ProbeReply) {
      try {
        auto rep = wire::decode_probe_reply(data);
        std::lock_guard lock(mu_);
        if (auto it = probes_.find(rep.txn); it != probes_.end() && !it->second) {
          it->second = rep;
          cv_.notify_all();
        }
      } catch (const Error&) {
      }
      return;
    }
    loop_.post([this, from, d = std::move(data)]() mutable { on_datagram(from, std::move(d)); });
  });
  loop_.post_after(config_.tick, [this] { tick(); });
}

Peer::~Peer() { stop(); }

PeerDescriptor Peer::descriptor() const {
  std::lock_guard lock(mu_);
  return self_;
}

NatClass Peer::nat_class() const {
  std::lock_guard lock(mu_);
  return self_.nat_class;
}

bool Peer::registered() const {
  std::lock_guard lock(mu_);
  return registered_;
}

std::vector<PeerDescriptor> Peer::roster() const {
  std::lock_guard lock(mu_);
  std::vector<PeerDescriptor> out;
  for (const auto& [_, d] : roster_) out.push_back(d);
  return out;
}

bool Peer::wait_roster(const std::function<bool(const std::vector<PeerDescriptor>&)>& pred,
                       milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] {
    std::vector<PeerDescriptor> out;
    for (const auto& [_, d] : roster_) out.push_back(d);
    return pred(out);
  });
}

void Peer::set_message_handler(MessageHandler h) {
  std::lock_guard lock(mu_);
  message_handler_ = std::move(h);
}

void Peer::set_link_handler(LinkHandler h) {
  std::lock_guard lock(mu_);
  link_handler_ = std::move(h);
}

Peer::Stats Peer::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

// ---- NAT classification ----

std::optional<wire::ProbeReply> Peer::probe(const Endpoint& to, bool change_ip, bool change_port) {
  auto txn = nonzero_random();
  {
    std::lock_guard lock(mu_);
    probes_[txn] = std::nullopt;
  }
  std::optional<wire::ProbeReply> result;
  for (int attempt = 0; attempt < std::max(1, config_.probe_attempts) && !result; ++attempt) {
    socket_->send_to(to, wire::encode(wire::Probe{txn, change_ip, change_port}));
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, config_.probe_timeout, [&] { return probes_[txn].has_value(); });
    result = probes_[txn];
  }
  std::lock_guard lock(mu_);
  probes_.erase(txn);
  return result;
}

ProbeObservations Peer::run_probes(const Endpoint& reflector) {
  ProbeObservations obs;
  obs.local = local_;
  auto r1 = probe(reflector, false, false);
  if (!r1) return obs;
  obs.test1_mapped = r1->mapped;
  if (r1->mapped == local_) return obs;
  obs.test2_received = probe(reflector, true, true).has_value();
  if (obs.test2_received) return obs;
  if (auto r1b = probe(Endpoint{r1->alternate.ip, reflector.port}, false, false)) obs.test1b_mapped = r1b->mapped;
  if (obs.test1b_mapped && *obs.test1b_mapped != *obs.test1_mapped) return obs;
  obs.test3_received = probe(reflector, false, true).has_value();
  return obs;
}

// ---- lifecycle ----

std::vector<PeerDescriptor> Peer::start() {
  if (!valid_name(config_.peer_id) || !valid_name(config_.group)) {
    throw Error(ErrorKind::Validation, "invalid peer_id or group name");
  }
  if (stopped_) throw Error(ErrorKind::Contract, "peer already stopped");
  ProbeObservations obs;
  obs.local = local_;
  for (const auto& r : config_.reflectors) {
    obs = run_probes(r);
    if (obs.test1_mapped) break;
  }
  auto nat = classify_nat(obs);
  {
    std::lock_guard lock(mu_);
    self_.peer_id = config_.peer_id;
    self_.group = config_.group;
    self_.identity_key = identity_.public_key();
    self_.fingerprint = identity_.fingerprint();
    self_.reflexive = obs.test1_mapped ? *obs.test1_mapped : *obs.test1b_mapped;
    self_.local = local_;
    self_.nat_class = nat;
    join_result_.reset();
  }
  loop_.call([this] {
    started_ = true;
    send_join();
  });
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, config_.join_timeout, [&] { return join_result_.has_value(); })) {
    lock.unlock();
    loop_.call([this] {
      started_ = false;
      sig_.reset();
    });
    throw Error(ErrorKind::Transport, "rendezvous " + config_.rendezvous.str() + " unreachable");
  }
  if (!join_result_->empty()) {
    auto reason = *join_result_;
    lock.unlock();
    loop_.call([this] {
      started_ = false;
      sig_.reset();
    });
    if (reason.find("duplicate") != std::string::npos) {
      throw Error(ErrorKind::Conflict, "registration rejected: " + reason);
    }
    throw Error(ErrorKind::Validation, "registration rejected: " + reason);
  }
  std::vector<PeerDescriptor> out;
  for (const auto& [_, d] : roster_) out.push_back(d);
  return out;
}

void Peer::stop() {
  if (stopped_.exchange(true)) return;
  try {
    loop_.call([this] {
      if (sig_) sig_send(wire::SigType::Leave, "{}");
      for (auto& [_, l] : links_) {
        if (l->phase != Link::Phase::Up) continue;
        if (auto path = return_path(*l)) send_frame(*l, *path, 0, ctrl(wire::Ctrl::Close));
      }
    });
  } catch (...) {
  }
  socket_->close();
  loop_.stop();
  std::lock_guard lock(mu_);
  registered_ = false;
  up_.clear();
  cv_.notify_all();
}

// ---- signaling ----

void Peer::send_join() {
  sig_ = std::make_unique<SignalChannel>(nonzero_random(), config_.rendezvous, config_.arq);
  last_ping_ = now_ms();
  std::string body;
  {
    std::lock_guard lock(mu_);
    body = self_.to_json();
  }
  sig_send(wire::SigType::Join, std::move(body));
}

void Peer::sig_send(wire::SigType type, std::string body) {
  if (!sig_) return;
  sig_->send(type, std::move(body));
  for (auto& d : sig_->poll(now_ms())) socket_->send_to(sig_->remote(), std::move(d));
}

void Peer::forward(const std::string& to, std::string payload) {
  json j;
  j["to"] = to;
  j["payload"] = json::parse(payload);
  sig_send(wire::SigType::Forward, j.dump());
}

void Peer::set_roster(const std::string& text) {
  std::map<std::string, PeerDescriptor> members;
  try {
    auto j = json::parse(text);
    for (const auto& m : j.at("members")) {
      auto d = PeerDescriptor::from_json(m.dump());
      members[d.peer_id] = d;
    }
  } catch (const std::exception&) {
    return;
  }
  std::lock_guard lock(mu_);
  roster_ = std::move(members);
  cv_.notify_all();
}

void Peer::on_datagram(const Endpoint& from, std::string data) {
  if (stopped_) return;
  auto kind = wire::kind_of(data);
  if (!kind) return;
  try {
    switch (*kind) {
      case wire::Kind::Sig: {
        auto seg = wire::decode_sig(data);
        if (!sig_ || seg.conn != sig_->conn() || from != sig_->remote()) return;
        std::string ack;
        auto frames = sig_->on_segment(seg, ack);
        socket_->send_to(from, std::move(ack));
        for (const auto& f : frames) on_sig_frame(f);
        break;
      }
      case wire::Kind::SigAck: {
        auto ack = wire::decode_sig_ack(data);
        if (sig_ && ack.conn == sig_->conn()) sig_->on_ack(ack);
        break;
      }
      case wire::Kind::Data: on_link_frame(from, data); break;
      case wire::Kind::RelayOk: {
        auto a = wire::decode_relay(data);
        if (!config_.relay || from != *config_.relay) return;
        if (auto it = links_.find(a.link_id); it != links_.end()) it->second->relay_ok = true;
        break;
      }
      default: break;
    }
  } catch (const Error&) {
    // Malformed datagram.
  }
}

void Peer::on_sig_frame(const wire::SigFrame& f) {
  using wire::SigType;
  switch (f.type) {
    case SigType::JoinOk: {
      set_roster(f.body);
      rejoin_backoff_ = milliseconds{0};
      std::lock_guard lock(mu_);
      registered_ = true;
      join_result_ = std::string();
      cv_.notify_all();
      break;
    }
    case SigType::Reject: {
      std::string reason = "rejected";
      try {
        reason = json::parse(f.body).at("reason").get<std::string>();
      } catch (const json::exception&) {
      }
      std::lock_guard lock(mu_);
      registered_ = false;
      join_result_ = reason;
      cv_.notify_all();
      break;
    }
    case SigType::Roster: set_roster(f.body); break;
    case SigType::Forwarded: {
      try {
        auto j = json::parse(f.body);
        on_forwarded(j.at("from").get<std::string>(), j.at("payload").dump());
      } catch (const json::exception&) {
      }
      break;
    }
    case SigType::ForwardFailed: {
      std::string to;
      try {
        to = json::parse(f.body).at("to").get<std::string>();
      } catch (const json::exception&) {
        return;
      }
      auto it = by_peer_.find(to);
      if (it != by_peer_.end() && links_.at(it->second)->phase == Link::Phase::Offered) {
        link_down(it->second, Error(ErrorKind::Connectivity, "peer '" + to + "' is not registered"));
      }
      break;
    }
    default: break;
  }
}

// ---- handshake ----

std::vector<std::string> Peer::my_candidates() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> c{self_.reflexive.str()};
  if (self_.local != self_.reflexive) c.push_back(self_.local.str());
  return c;
}

std::string Peer::handshake_message(const Link& l, bool offer) {
  auto cands = my_candidates();
  const std::string tag = offer ? "offer" : "answer";
  const std::string signed_text = tag + "|" + std::to_string(l.id) + "|" + config_.peer_id + "|" + l.remote +
                                  "|" + to_hex(l.eph.public_key) + "|" + join(cands, ",");
  json j{{"msg", tag},
         {"link_id", l.id},
         {"to", l.remote},
         {"identity_key", to_hex(identity_.public_key())},
         {"eph", to_hex(l.eph.public_key)},
         {"candidates", cands},
         {"sig", to_hex(identity_.sign(signed_text))}};
  return j.dump();
}

std::string Peer::verify_handshake(const std::string& from, const std::string& signed_text,
                                   const std::string& claimed_key, const std::string& signature) const {
  std::string expected_fp;
  {
    std::lock_guard lock(mu_);
    auto it = roster_.find(from);
    if (it == roster_.end()) throw Error(ErrorKind::Security, "handshake from unknown peer '" + from + "'");
    expected_fp = it->second.fingerprint;
  }
  if (auto pin = config_.pinned_fingerprints.find(from); pin != config_.pinned_fingerprints.end()) {
    if (pin->second != expected_fp) throw Error(ErrorKind::Security, "roster fingerprint differs from pinned value");
  }
  if (fingerprint_of(claimed_key) != expected_fp) {
    throw Error(ErrorKind::Security, "identity key does not match fingerprint of '" + from + "'");
  }
  if (!verify_signature(claimed_key, signed_text, signature)) {
    throw Error(ErrorKind::Security, "handshake signature from '" + from + "' is invalid");
  }
  return claimed_key;
}

namespace {

struct Handshake {
  std::string tag;
  std::uint64_t link_id = 0;
  std::string to;
  std::string identity_key;
  std::string eph;
  std::vector<std::string> candidates;
  std::string sig;
};

Handshake parse_handshake(const std::string& payload) {
  try {
    auto j = json::parse(payload);
    Handshake h;
    h.tag = j.at("msg").get<std::string>();
    h.link_id = j.at("link_id").get<std::uint64_t>();
    h.to = j.at("to").get<std::string>();
    h.identity_key = from_hex(j.at("identity_key").get<std::string>());
    h.eph = from_hex(j.at("eph").get<std::string>());
    h.candidates = j.at("candidates").get<std::vector<std::string>>();
    h.sig = from_hex(j.at("sig").get<std::string>());
    return h;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Security, std::string("malformed handshake: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Security, std::string("malformed handshake: ") + e.what());
  }
}

std::string signed_text_of(const Handshake& h, const std::string& from) {
  return h.tag + "|" + std::to_string(h.link_id) + "|" + from + "|" + h.to + "|" + to_hex(h.eph) + "|" +
         join(h.candidates, ",");
}

std::vector<Endpoint> parse_candidates(const std::vector<std::string>& c) {
  std::vector<Endpoint> out;
  for (const auto& s : c) out.push_back(Endpoint::parse(s));
  return out;
}

}  // namespace

void Peer::on_forwarded(const std::string& from, const std::string& payload) {
  std::string msg;
  try {
    msg = json::parse(payload).at("msg").get<std::string>();
  } catch (const json::exception&) {
    return;
  }
  if (msg == "offer") {
    on_offer(from, payload);
  } else if (msg == "answer") {
    on_answer(from, payload);
  } else if (msg == "select") {
    on_select(from, payload);
  } else if (msg == "reject") {
    try {
      auto j = json::parse(payload);
      auto id = j.at("link_id").get<std::uint64_t>();
      auto it = links_.find(id);
      if (it != links_.end() && it->second->initiator && it->second->remote == from) {
        link_down(id, Error(ErrorKind::Security,
                            "peer '" + from + "' rejected the handshake: " + j.value("reason", std::string())));
      }
    } catch (const json::exception&) {
    }
  }
}

void Peer::on_offer(const std::string& from, const std::string& payload) {
  std::uint64_t link_id = 0;
  try {
    auto h = parse_handshake(payload);
    link_id = h.link_id;
    if (h.to != config_.peer_id) return;
    verify_handshake(from, signed_text_of(h, from), h.identity_key, h.sig);
    if (links_.count(h.link_id)) return;  // duplicate delivery

    std::vector<std::shared_ptr<std::promise<LinkInfo>>> inherited;
    if (auto existing = by_peer_.find(from); existing != by_peer_.end()) {
      auto& old = *links_.at(existing->second);
      if (old.initiator && old.phase == Link::Phase::Offered) {
        // Both sides offered at once: the smaller peer_id stays initiator.
        if (config_.peer_id < from) return;
        inherited = std::move(old.waiters);
        old.waiters.clear();
      }
      link_down(existing->second, Error(ErrorKind::Transport, "link replaced"));
    }

    auto l = std::make_unique<Link>(config_.arq);
    l->id = h.link_id;
    l->remote = from;
    l->initiator = false;
    l->eph = EphemeralKeys::generate();
    l->keys = derive_session(l->eph, h.eph, false);
    l->keyed = true;
    l->candidates = parse_candidates(h.candidates);
    l->phase = Link::Phase::Punching;
    l->started = l->punch_started = now_ms();
    l->waiters = std::move(inherited);
    auto answer = handshake_message(*l, false);
    by_peer_[from] = l->id;
    links_[l->id] = std::move(l);
    forward(from, answer);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Security && e.kind() != ErrorKind::Validation) throw;
    {
      std::lock_guard lock(mu_);
      ++stats_.handshake_failures;
    }
    forward(from, json{{"msg", "reject"}, {"link_id", link_id}, {"reason", e.what()}}.dump());
  }
}

void Peer::on_answer(const std::string& from, const std::string& payload) {
  std::uint64_t link_id = 0;
  try {
    link_id = json::parse(payload).at("link_id").get<std::uint64_t>();
  } catch (const json::exception&) {
    return;
  }
  auto it = links_.find(link_id);
  if (it == links_.end()) return;
  auto& l = *it->second;
  if (!l.initiator || l.remote != from || l.phase != Link::Phase::Offered) return;
  try {
    auto h = parse_handshake(payload);
    if (h.to != config_.peer_id) throw Error(ErrorKind::Security, "answer addressed to another peer");
    verify_handshake(from, signed_text_of(h, from), h.identity_key, h.sig);
    l.keys = derive_session(l.eph, h.eph, true);
    l.keyed = true;
    l.candidates = parse_candidates(h.candidates);
  } catch (const Error& e) {
    {
      std::lock_guard lock(mu_);
      ++stats_.handshake_failures;
    }
    link_down(link_id, Error(ErrorKind::Security, e.what()));
    return;
  }
  l.phase = Link::Phase::Punching;
  l.punch_started = now_ms();
  l.last_punch = milliseconds{0};
}

void Peer::on_select(const std::string& from, const std::string& payload) {
  try {
    auto j = json::parse(payload);
    auto id = j.at("link_id").get<std::uint64_t>();
    auto mode = j.at("mode").get<std::string>();
    auto sig = from_hex(j.at("sig").get<std::string>());
    auto it = links_.find(id);
    if (it == links_.end()) return;
    auto& l = *it->second;
    if (l.initiator || l.remote != from) return;
    std::string key;
    {
      std::lock_guard lock(mu_);
      auto r = roster_.find(from);
      if (r == roster_.end()) return;
      key = r->second.identity_key;
    }
    if (!verify_signature(key, "select|" + std::to_string(id) + "|" + mode, sig)) {
      std::lock_guard lock(mu_);
      ++stats_.handshake_failures;
      return;
    }
    if (l.phase == Link::Phase::Up) return;
    if (mode == "relayed") {
      if (!config_.relay) {
        link_down(id, Error(ErrorKind::Connectivity, "relayed link requested but no relay configured"));
        return;
      }
      l.kind = LinkKind::Relayed;
      l.phase = Link::Phase::Allocating;
      l.last_alloc = milliseconds{0};
    } else {
      if (!l.direct && !l.candidates.empty()) l.direct = l.candidates.front();
      link_up(l, LinkKind::Direct);
    }
  } catch (const std::exception&) {
  }
}

// ---- links ----

LinkInfo Peer::establish(const std::string& peer_id) {
  if (!registered()) throw Error(ErrorKind::Transport, "not registered with the rendezvous");
  if (peer_id == config_.peer_id) throw Error(ErrorKind::Contract, "cannot link to self");
  auto p = std::make_shared<std::promise<LinkInfo>>();
  auto fut = p->get_future();
  loop_.post([this, peer_id, p] {
    if (auto it = by_peer_.find(peer_id); it != by_peer_.end()) {
      auto& l = *links_.at(it->second);
      if (l.phase == Link::Phase::Up) {
        p->set_value(info_of(l));
      } else {
        l.waiters.push_back(p);
      }
      return;
    }
    {
      std::lock_guard lock(mu_);
      if (!roster_.count(peer_id)) {
        p->set_exception(std::make_exception_ptr(
            Error(ErrorKind::Connectivity, "peer '" + peer_id + "' is not in the roster")));
        return;
      }
    }
    auto l = std::make_unique<Link>(config_.arq);
    l->id = nonzero_random();
    l->remote = peer_id;
    l->initiator = true;
    l->eph = EphemeralKeys::generate();
    l->started = now_ms();
    l->waiters.push_back(p);
    auto offer = handshake_message(*l, true);
    by_peer_[peer_id] = l->id;
    links_[l->id] = std::move(l);
    forward(peer_id, offer);
  });
  if (fut.wait_for(config_.establish_timeout + milliseconds{1000}) != std::future_status::ready) {
    throw Error(ErrorKind::Connectivity, "link to '" + peer_id + "' timed out");
  }
  try {
    return fut.get();
  } catch (const std::future_error&) {
    throw Error(ErrorKind::Transport, "peer stopped");
  }
}

std::optional<LinkInfo> Peer::link(const std::string& peer_id) const {
  if (stopped_) return std::nullopt;
  try {
    return const_cast<EventLoop&>(loop_).call([&]() -> std::optional<LinkInfo> {
      auto it = by_peer_.find(peer_id);
      if (it == by_peer_.end()) return std::nullopt;
      const auto& l = *links_.at(it->second);
      if (l.phase != Link::Phase::Up) return std::nullopt;
      return info_of(l);
    });
  } catch (const std::future_error&) {
    return std::nullopt;
  }
}

LinkInfo Peer::info_of(const Link& l) const {
  LinkInfo i;
  i.remote = l.remote;
  i.link_id = l.id;
  i.kind = l.kind;
  if (l.kind == LinkKind::Relayed) i.relay = config_.relay;
  else i.remote_endpoint = l.direct;
  i.messages_sent = l.messages_sent;
  i.messages_received = l.messages_received;
  i.integrity_failures = l.integrity_failures;
  return i;
}

std::uint64_t Peer::send(const std::string& peer_id, std::string payload) {
  std::uint64_t link_id = 0, number = 0;
  {
    std::lock_guard lock(mu_);
    auto it = up_.find(peer_id);
    if (it == up_.end()) throw Error(ErrorKind::Transport, "no link to '" + peer_id + "'");
    link_id = it->second.link_id;
    number = ++it->second.queued;
  }
  loop_.post([this, link_id, payload = std::move(payload)] {
    auto it = links_.find(link_id);
    if (it == links_.end() || it->second->phase != Link::Phase::Up) {
      std::lock_guard lock(mu_);
      ++stats_.dropped_sends;
      return;
    }
    auto& l = *it->second;
    l.tx.push(payload);
    ++l.messages_sent;
    auto path = return_path(l);
    if (!path) return;
    for (auto& s : l.tx.poll(now_ms())) {
      send_frame(l, *path, s.seq, ctrl(wire::Ctrl::Seg, std::string(1, s.last ? '\1' : '\0') + s.data));
    }
  });
  return number;
}

bool Peer::flush(const std::string& peer_id, milliseconds timeout) {
  std::unique_lock lock(mu_);
  auto it = up_.find(peer_id);
  if (it == up_.end()) return false;
  const auto link_id = it->second.link_id;
  const auto target = it->second.queued;
  return cv_.wait_for(lock, timeout, [&] {
    auto e = up_.find(peer_id);
    return e == up_.end() || e->second.link_id != link_id || e->second.acked >= target;
  }) && up_.count(peer_id) && up_.at(peer_id).link_id == link_id;
}

std::optional<Endpoint> Peer::return_path(const Link& l) const {
  if (l.kind == LinkKind::Relayed && (l.phase == Link::Phase::Allocating || l.phase == Link::Phase::Up)) {
    return config_.relay;
  }
  return l.direct;
}

void Peer::send_frame(Link& l, const Endpoint& to, std::uint64_t seq, std::string plaintext) {
  socket_->send_to(to, wire::seal_frame(l.keys.tx, wire::FrameHeader{l.id, seq}, plaintext, config_.encrypt));
  std::lock_guard lock(mu_);
  ++stats_.frames_sent;
}

void Peer::link_up(Link& l, LinkKind kind) {
  l.phase = Link::Phase::Up;
  l.kind = kind;
  auto info = info_of(l);
  LinkHandler handler;
  {
    std::lock_guard lock(mu_);
    up_[l.remote] = UpEntry{l.id, kind, 0, 0};
    handler = link_handler_;
    cv_.notify_all();
  }
  for (auto& w : l.waiters) w->set_value(info);
  l.waiters.clear();
  if (handler) handler(l.remote, true);
}

void Peer::link_down(std::uint64_t link_id, const Error& why) {
  auto it = links_.find(link_id);
  if (it == links_.end()) return;
  auto l = std::move(it->second);
  links_.erase(it);
  if (auto p = by_peer_.find(l->remote); p != by_peer_.end() && p->second == link_id) by_peer_.erase(p);
  bool was_up = false;
  LinkHandler handler;
  {
    std::lock_guard lock(mu_);
    if (auto u = up_.find(l->remote); u != up_.end() && u->second.link_id == link_id) {
      up_.erase(u);
      was_up = true;
    }
    handler = link_handler_;
    cv_.notify_all();
  }
  for (auto& w : l->waiters) w->set_exception(std::make_exception_ptr(why));
  if (was_up && handler) handler(l->remote, false);
}

void Peer::fail_link(std::uint64_t link_id, const Error& why) { link_down(link_id, why); }

void Peer::on_link_frame(const Endpoint& from, const std::string& data) {
  wire::FrameHeader h;
  try {
    h = wire::peek_header(data);
  } catch (const Error&) {
    return;
  }
  auto it = links_.find(h.link_id);
  if (it == links_.end() || !it->second->keyed) {
    std::lock_guard lock(mu_);
    ++stats_.unknown_link_frames;
    return;
  }
  auto& l = *it->second;
  auto plain = wire::open_frame(l.keys.rx, data, config_.encrypt);
  if (!plain) {
    ++l.integrity_failures;
    std::lock_guard lock(mu_);
    ++stats_.integrity_failures;
    return;
  }
  {
    std::lock_guard lock(mu_);
    ++stats_.frames_received;
  }
  if (plain->empty()) return;
  const bool via_relay = config_.relay && from == *config_.relay;
  const auto c = static_cast<wire::Ctrl>((*plain)[0]);
  std::string_view body = std::string_view(*plain).substr(1);
  switch (c) {
    case wire::Ctrl::Punch:
      send_frame(l, from, 0, ctrl(wire::Ctrl::PunchAck));
      if (!via_relay && l.kind == LinkKind::Direct) l.direct = from;
      break;
    case wire::Ctrl::PunchAck:
      if (!via_relay) {
        l.direct = from;
        l.punch_acked = true;
      }
      break;
    case wire::Ctrl::Seg: {
      if (h.seq == 0 || body.empty()) return;
      if (l.phase != Link::Phase::Up) {
        // Data before SELECT: the path it arrived on settles the mode.
        if (l.initiator) return;
        if (via_relay) {
          if (l.phase != Link::Phase::Allocating) return;
          link_up(l, LinkKind::Relayed);
        } else if (l.phase == Link::Phase::Punching) {
          l.direct = from;
          link_up(l, LinkKind::Direct);
        } else {
          return;
        }
      } else if (l.kind == LinkKind::Direct && !via_relay) {
        l.direct = from;
      }
      auto msgs = l.rx.on_segment(h.seq, body[0] != 0, body.substr(1));
      auto path = return_path(l);
      send_frame(l, path ? *path : from, 0, ctrl(wire::Ctrl::Ack, u64_bytes(l.rx.ack())));
      if (msgs.empty()) return;
      l.messages_received += msgs.size();
      MessageHandler handler;
      {
        std::lock_guard lock(mu_);
        handler = message_handler_;
      }
      const std::string remote = l.remote;
      for (auto& m : msgs) {
        if (handler) handler(remote, std::move(m));
      }
      break;
    }
    case wire::Ctrl::Ack: {
      if (body.size() != 8) return;
      ByteReader r(body);
      l.tx.on_ack(r.u64());
      std::lock_guard lock(mu_);
      if (auto u = up_.find(l.remote); u != up_.end() && u->second.link_id == l.id) {
        u->second.acked = l.tx.messages_acked();
        cv_.notify_all();
      }
      break;
    }
    case wire::Ctrl::Close:
      link_down(l.id, Error(ErrorKind::Transport, "peer closed the link"));
      break;
  }
}

void Peer::tick() {
  if (stopped_) return;
  const auto now = now_ms();
  if (sig_) {
    for (auto& d : sig_->poll(now)) socket_->send_to(sig_->remote(), std::move(d));
    if (sig_->failed()) {
      sig_.reset();
      {
        std::lock_guard lock(mu_);
        registered_ = false;
        cv_.notify_all();
      }
      rejoin_backoff_ = std::min(config_.rejoin_backoff_max,
                                 std::max(milliseconds{100}, rejoin_backoff_ * 2));
      rejoin_at_ = now + rejoin_backoff_;
    } else if (registered() && now - last_ping_ >= config_.ping_interval) {
      last_ping_ = now;
      sig_send(wire::SigType::Ping, "{}");
    }
  } else if (started_ && now >= rejoin_at_) {
    {
      std::lock_guard lock(mu_);
      ++stats_.rejoins;
    }
    send_join();
  }

  std::vector<std::uint64_t> ids;
  for (const auto& [id, _] : links_) ids.push_back(id);
  for (auto id : ids) {
    auto it = links_.find(id);
    if (it != links_.end()) tick_link(*it->second, now);
  }
  loop_.post_after(config_.tick, [this] { tick(); });
}

void Peer::tick_link(Link& l, milliseconds now) {
  using Phase = Link::Phase;
  switch (l.phase) {
    case Phase::Offered:
      if (now - l.started > config_.establish_timeout) {
        link_down(l.id, Error(ErrorKind::Connectivity, "no answer from '" + l.remote + "'"));
      }
      return;
    case Phase::Punching: {
      if (now - l.last_punch >= config_.punch_interval) {
        l.last_punch = now;
        auto targets = l.candidates;
        if (l.direct && std::find(targets.begin(), targets.end(), *l.direct) == targets.end()) {
          targets.push_back(*l.direct);
        }
        for (const auto& t : targets) send_frame(l, t, 0, ctrl(wire::Ctrl::Punch));
      }
      if (l.initiator) {
        if (l.punch_acked && l.direct) {
          const std::string mode = "direct";
          forward(l.remote, json{{"msg", "select"},
                                 {"link_id", l.id},
                                 {"mode", mode},
                                 {"sig", to_hex(identity_.sign("select|" + std::to_string(l.id) + "|" + mode))}}
                                .dump());
          link_up(l, LinkKind::Direct);
        } else if (now - l.punch_started >= config_.punch_timeout) {
          if (!config_.relay) {
            link_down(l.id, Error(ErrorKind::Connectivity,
                                  "direct traversal to '" + l.remote + "' failed and no relay is configured"));
            return;
          }
          const std::string mode = "relayed";
          forward(l.remote, json{{"msg", "select"},
                                 {"link_id", l.id},
                                 {"mode", mode},
                                 {"sig", to_hex(identity_.sign("select|" + std::to_string(l.id) + "|" + mode))}}
                                .dump());
          l.kind = LinkKind::Relayed;
          l.phase = Phase::Allocating;
          l.last_alloc = milliseconds{0};
        }
      } else if (now - l.started > config_.establish_timeout) {
        link_down(l.id, Error(ErrorKind::Connectivity, "link with '" + l.remote + "' never completed"));
      }
      return;
    }
    case Phase::Allocating:
      if (l.relay_ok) {
        link_up(l, LinkKind::Relayed);
        return;
      }
      if (now - l.punch_started > config_.establish_timeout) {
        link_down(l.id, Error(ErrorKind::Connectivity, "relay " + config_.relay->str() + " unavailable"));
        return;
      }
      if (now - l.last_alloc >= kAllocRetry) {
        l.last_alloc = now;
        socket_->send_to(*config_.relay,
                         wire::encode_relay(wire::Kind::RelayAlloc,
                                            wire::RelayAlloc{l.id, static_cast<std::uint8_t>(l.initiator ? 0 : 1)}));
      }
      return;
    case Phase::Up: {
      auto path = return_path(l);
      if (!path) return;
      for (auto& s : l.tx.poll(now)) {
        send_frame(l, *path, s.seq, ctrl(wire::Ctrl::Seg, std::string(1, s.last ? '\1' : '\0') + s.data));
      }
      if (l.tx.retransmissions() != l.reported_retx) {
        std::lock_guard lock(mu_);
        stats_.retransmissions += l.tx.retransmissions() - l.reported_retx;
        l.reported_retx = l.tx.retransmissions();
      }
      if (l.tx.failed()) link_down(l.id, Error(ErrorKind::Transport, "link to '" + l.remote + "' lost"));
      return;
    }
  }
}

}  // namespace lakegrid::overlay
