#include "lakegrid/overlay/fabric.hpp"

namespace lakegrid::overlay {

namespace {
constexpr std::uint16_t kRendezvousPort = 5222;
constexpr std::uint16_t kReflectorPort = 3478;
constexpr std::uint16_t kRelayPort = 3479;
}  // namespace

SimFabric::SimFabric() : SimFabric(Options{}) {}

SimFabric::SimFabric(Options options) : net_(std::make_unique<SimNetwork>(options.network)) {
  rendezvous_host_ = net_->add_public_host();
  rendezvous_ = std::make_unique<Rendezvous>(net_->open(rendezvous_host_, kRendezvousPort), options.rendezvous);

  auto reflector_host = net_->add_public_host(2);
  std::array<std::unique_ptr<DatagramSocket>, 4> sockets;
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t p = 0; p < 2; ++p) {
      sockets[a * 2 + p] = net_->open(reflector_host, static_cast<std::uint16_t>(kReflectorPort + p), a);
    }
  }
  reflector_ = std::make_unique<Reflector>(std::move(sockets));

  if (options.relay) {
    relay_host_ = net_->add_public_host();
    relay_ = std::make_unique<Relay>(net_->open(relay_host_, kRelayPort));
  }
}

SimFabric::~SimFabric() {
  if (relay_) relay_->stop();
  reflector_->stop();
  rendezvous_->stop();
  net_->stop();
}

PeerConfig SimFabric::peer_config(const std::string& peer_id, const std::string& group) const {
  PeerConfig c;
  c.peer_id = peer_id;
  c.group = group;
  c.rendezvous = rendezvous_->endpoint();
  c.reflectors = {reflector_->primary()};
  if (relay_) c.relay = relay_->endpoint();
  return c;
}

std::unique_ptr<Peer> SimFabric::make_peer(NatClass nat, PeerConfig config, SimNetwork::HostId* host) {
  auto h = net_->add_host(NatPolicy::for_class(nat));
  if (host) *host = h;
  return std::make_unique<Peer>(net_->open(h), Identity::generate(), std::move(config));
}

}  // namespace lakegrid::overlay
