#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "lakegrid/overlay/arq.hpp"
#include "lakegrid/overlay/endpoint.hpp"
#include "lakegrid/overlay/event_loop.hpp"
#include "lakegrid/overlay/nat.hpp"
#include "lakegrid/overlay/signal_channel.hpp"

namespace lakegrid::overlay {

struct PeerDescriptor {
  std::string peer_id;
  std::string group;
  std::string identity_key;  // raw Ed25519 public key
  std::string fingerprint;   // raw SHA-256 of identity_key
  Endpoint reflexive;
  Endpoint local;
  NatClass nat_class = NatClass::Open;

  std::string to_json() const;
  static PeerDescriptor from_json(std::string_view text);

  bool operator==(const PeerDescriptor&) const = default;
};

// Letters, digits, '_', '-', '.'; 1 to 64 characters.
bool valid_name(std::string_view name);

struct RendezvousConfig {
  ArqConfig arq;
  std::chrono::milliseconds tick{10};
  // A member that neither pings nor acknowledges for this long is dropped.
  std::chrono::milliseconds member_timeout{3000};
};

/// Group membership and signaling relay. Peers register over a signaling
/// channel, receive the full roster whenever it changes and use the service
/// to pass handshake messages to each other; it never sees session keys.
class Rendezvous {
 public:
  // Returning false drops the forwarded message; `body` may be rewritten.
  using ForwardInterceptor =
      std::function<bool(const std::string& from, const std::string& to, std::string& body)>;

  struct Stats {
    std::uint64_t joins = 0;
    std::uint64_t rejects = 0;
    std::uint64_t forwards = 0;
    std::uint64_t evictions = 0;
  };

  explicit Rendezvous(std::unique_ptr<DatagramSocket> socket, RendezvousConfig config = {});
  ~Rendezvous();

  Endpoint endpoint() const { return endpoint_; }
  std::vector<PeerDescriptor> members(const std::string& group) const;
  void set_forward_interceptor(ForwardInterceptor f);
  Stats stats() const;
  void stop();

 private:
  struct Conn;
  struct Member {
    PeerDescriptor descriptor;
    std::uint64_t conn = 0;
  };

  void on_datagram(const Endpoint& from, std::string data);
  void on_frame(Conn& conn, const wire::SigFrame& frame);
  void handle_join(Conn& conn, const std::string& body);
  void handle_forward(Conn& conn, const std::string& body);
  void remove_member(const std::string& group, const std::string& peer_id);
  void push_roster(const std::string& group);
  std::string roster_json(const std::string& group) const;
  void tick();
  void flush(Conn& conn);

  RendezvousConfig config_;
  std::unique_ptr<DatagramSocket> socket_;
  Endpoint endpoint_;
  EventLoop loop_;
  std::map<std::uint64_t, std::unique_ptr<Conn>> conns_;
  mutable std::mutex mu_;  // guards groups_, interceptor_, stats_ for outside readers
  std::map<std::string, std::map<std::string, Member>> groups_;
  std::map<std::string, std::uint64_t> roster_version_;
  ForwardInterceptor interceptor_;
  Stats stats_;
  std::atomic<bool> stopped_{false};
};

}  // namespace lakegrid::overlay
