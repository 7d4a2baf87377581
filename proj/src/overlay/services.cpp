#include "lakegrid/overlay/services.hpp"

#include "lakegrid/common/error.hpp"
#include "lakegrid/overlay/wire.hpp"

namespace lakegrid::overlay {

Reflector::Reflector(std::array<std::unique_ptr<DatagramSocket>, 4> sockets) : sockets_(std::move(sockets)) {
  for (std::size_t i = 0; i < 4; ++i) endpoints_[i] = sockets_[i]->local_endpoint();
  for (std::size_t i = 0; i < 4; ++i) {
    sockets_[i]->set_handler([this, i](const Endpoint& from, std::string data) {
      if (wire::kind_of(data) != wire::Kind::Probe) return;
      wire::Probe p;
      try {
        p = wire::decode_probe(data);
      } catch (const Error&) {
        return;
      }
      ++probes_;
      std::size_t j = i ^ (p.change_ip ? 2u : 0u) ^ (p.change_port ? 1u : 0u);
      sockets_[j]->send_to(from, wire::encode(wire::ProbeReply{p.txn, from, endpoints_[3]}));
    });
  }
}

Reflector::~Reflector() { stop(); }

void Reflector::stop() {
  for (auto& s : sockets_) s->close();
}

Relay::Relay(std::unique_ptr<DatagramSocket> socket)
    : socket_(std::move(socket)), endpoint_(socket_->local_endpoint()) {
  socket_->set_handler([this](const Endpoint& from, std::string data) { on_datagram(from, data); });
}

Relay::~Relay() { stop(); }

void Relay::stop() { socket_->close(); }

std::size_t Relay::allocations() const {
  std::lock_guard lock(mu_);
  return allocs_.size();
}

void Relay::on_datagram(const Endpoint& from, const std::string& data) {
  auto kind = wire::kind_of(data);
  try {
    if (kind == wire::Kind::RelayAlloc) {
      auto a = wire::decode_relay(data);
      {
        std::lock_guard lock(mu_);
        allocs_[a.link_id][a.role] = from;
      }
      socket_->send_to(from, wire::encode_relay(wire::Kind::RelayOk, a));
    } else if (kind == wire::Kind::Data) {
      auto h = wire::peek_header(data);
      std::optional<Endpoint> to;
      {
        std::lock_guard lock(mu_);
        auto it = allocs_.find(h.link_id);
        if (it == allocs_.end()) return;
        auto& eps = it->second;
        if (eps[0] == from) to = eps[1];
        else if (eps[1] == from) to = eps[0];
      }
      if (!to) return;
      ++forwarded_;
      socket_->send_to(*to, data);
    }
  } catch (const Error&) {
  }
}

}  // namespace lakegrid::overlay
