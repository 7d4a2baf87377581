#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "lakegrid/overlay/endpoint.hpp"

namespace lakegrid::overlay {

/// Address-reflection service used for NAT classification. It listens on
/// two addresses times two ports; socket index is address*2 + port.
/// A probe is answered with the sender's observed endpoint, from the socket
/// selected by the probe's change flags.
class Reflector {
 public:
  explicit Reflector(std::array<std::unique_ptr<DatagramSocket>, 4> sockets);
  ~Reflector();

  Endpoint primary() const { return endpoints_[0]; }
  std::uint64_t probes() const { return probes_; }
  void stop();

 private:
  std::array<std::unique_ptr<DatagramSocket>, 4> sockets_;
  std::array<Endpoint, 4> endpoints_;
  std::atomic<std::uint64_t> probes_{0};
};

/// Forwards link frames between the two endpoints that allocated a link id.
/// Frames stay encrypted end to end; the relay only reads the link id.
class Relay {
 public:
  explicit Relay(std::unique_ptr<DatagramSocket> socket);
  ~Relay();

  Endpoint endpoint() const { return endpoint_; }
  std::uint64_t forwarded() const { return forwarded_; }
  std::size_t allocations() const;
  void stop();

 private:
  void on_datagram(const Endpoint& from, const std::string& data);

  std::unique_ptr<DatagramSocket> socket_;
  Endpoint endpoint_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, std::array<std::optional<Endpoint>, 2>> allocs_;
  std::atomic<std::uint64_t> forwarded_{0};
};

}  // namespace lakegrid::overlay
