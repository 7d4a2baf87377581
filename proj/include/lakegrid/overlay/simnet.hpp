#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lakegrid/overlay/endpoint.hpp"
#include "lakegrid/overlay/nat.hpp"

namespace lakegrid::overlay {

/// A datagram as seen on the public segment: source after outbound NAT
/// translation, destination before inbound translation.
struct Packet {
  Endpoint src;
  Endpoint dst;
  std::string data;
};

enum class TapVerdict { Pass, Drop };
using Tap = std::function<TapVerdict(Packet&)>;

/// In-process internet: public hosts, hosts behind simulated NAT boxes, and
/// a delivery thread. Sockets hand out DatagramSocket instances that behave
/// like UDP, so overlay code runs unchanged on either.
class SimNetwork {
 public:
  using HostId = std::uint32_t;

  struct Options {
    std::int64_t latency_ms = 0;
    double loss = 0.0;
    std::uint64_t seed = 1;
  };

  struct Stats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t filtered = 0;     // refused by a NAT filter
    std::uint64_t unroutable = 0;   // no mapping, host or socket
    std::uint64_t tapped = 0;       // dropped by a tap
    std::uint64_t lost = 0;         // random loss
    std::uint64_t host_down = 0;
  };

  SimNetwork();
  explicit SimNetwork(Options options);
  ~SimNetwork();
  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  // OPEN gives a public address; any other class puts the host alone behind
  // a fresh NAT box with that policy.
  HostId add_host(const NatPolicy& policy);
  HostId add_public_host(std::size_t address_count = 1);
  std::vector<std::uint32_t> addresses(HostId host) const;
  std::optional<NatPolicy> nat_policy(HostId host) const;

  // Port 0 picks an ephemeral port.
  std::unique_ptr<DatagramSocket> open(HostId host, std::uint16_t port = 0, std::size_t address_index = 0);

  void set_host_down(HostId host, bool down);

  std::size_t add_tap(Tap tap);
  void remove_tap(std::size_t id);

  Stats stats() const;
  // Blocks until the delivery queue is empty.
  void drain();
  void stop();

  struct Core;

 private:
  std::shared_ptr<Core> core_;
};

}  // namespace lakegrid::overlay
