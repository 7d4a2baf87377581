#pragma once

#include <memory>
#include <optional>
#include <string>

#include "lakegrid/overlay/peer.hpp"
#include "lakegrid/overlay/rendezvous.hpp"
#include "lakegrid/overlay/services.hpp"
#include "lakegrid/overlay/simnet.hpp"

namespace lakegrid::overlay {

/// Rendezvous, reflector and relay on a simulated network, plus a factory
/// for peers placed behind NATs of a chosen class.
class SimFabric {
 public:
  struct Options {
    SimNetwork::Options network;
    RendezvousConfig rendezvous;
    bool relay = true;
  };

  SimFabric();
  explicit SimFabric(Options options);
  ~SimFabric();

  SimNetwork& network() { return *net_; }
  Rendezvous& rendezvous() { return *rendezvous_; }
  Reflector& reflector() { return *reflector_; }
  Relay* relay() { return relay_.get(); }
  SimNetwork::HostId rendezvous_host() const { return rendezvous_host_; }
  SimNetwork::HostId relay_host() const { return relay_host_; }

  PeerConfig peer_config(const std::string& peer_id, const std::string& group = "lakegrid") const;
  // The peer is not started. `host` receives the new host id.
  std::unique_ptr<Peer> make_peer(NatClass nat, PeerConfig config, SimNetwork::HostId* host = nullptr);

 private:
  std::unique_ptr<SimNetwork> net_;
  SimNetwork::HostId rendezvous_host_ = 0;
  SimNetwork::HostId relay_host_ = 0;
  std::unique_ptr<Rendezvous> rendezvous_;
  std::unique_ptr<Reflector> reflector_;
  std::unique_ptr<Relay> relay_;
};

}  // namespace lakegrid::overlay
