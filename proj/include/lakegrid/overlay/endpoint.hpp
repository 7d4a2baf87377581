#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

namespace lakegrid::overlay {

/// IPv4 address and port, host byte order.
struct Endpoint {
  std::uint32_t ip = 0;
  std::uint16_t port = 0;

  bool valid() const { return ip != 0 && port != 0; }
  std::string str() const;
  // "a.b.c.d:port"; throws Error(Validation).
  static Endpoint parse(std::string_view text);

  auto operator<=>(const Endpoint&) const = default;
};

std::string ip_to_string(std::uint32_t ip);
std::uint32_t parse_ip(std::string_view text);

using DatagramHandler = std::function<void(const Endpoint& from, std::string data)>;

/// Unreliable datagram transport. Handlers run on the transport's own thread
/// and should return quickly. After close() returns no handler is running
/// or will run again.
class DatagramSocket {
 public:
  virtual ~DatagramSocket() = default;
  virtual Endpoint local_endpoint() const = 0;
  virtual void send_to(const Endpoint& to, std::string data) = 0;
  virtual void set_handler(DatagramHandler handler) = 0;
  virtual void close() = 0;
};

/// Real UDP socket with a receive thread.
class UdpSocket final : public DatagramSocket {
 public:
  // Port 0 binds an ephemeral port.
  explicit UdpSocket(const Endpoint& bind);
  ~UdpSocket() override;

  Endpoint local_endpoint() const override;
  void send_to(const Endpoint& to, std::string data) override;
  void set_handler(DatagramHandler handler) override;
  void close() override;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

}  // namespace lakegrid::overlay

template <>
struct std::hash<lakegrid::overlay::Endpoint> {
  std::size_t operator()(const lakegrid::overlay::Endpoint& e) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{e.ip} << 16) | e.port);
  }
};
