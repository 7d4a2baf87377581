#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lakegrid/overlay/arq.hpp"
#include "lakegrid/overlay/endpoint.hpp"
#include "lakegrid/overlay/wire.hpp"

namespace lakegrid::overlay {

/// Reliable ordered channel of signaling frames between a peer and the
/// rendezvous, identified by a connection id chosen by the peer.
class SignalChannel {
 public:
  SignalChannel(std::uint64_t conn, Endpoint remote, ArqConfig config)
      : conn_(conn), remote_(remote), tx_(config), rx_(config.window) {}

  std::uint64_t conn() const { return conn_; }
  const Endpoint& remote() const { return remote_; }
  void set_remote(const Endpoint& e) { remote_ = e; }

  void send(wire::SigType type, std::string body);
  // Frames completed by the segment; `ack` receives the datagram to return.
  std::vector<wire::SigFrame> on_segment(const wire::SigSegment& seg, std::string& ack);
  void on_ack(const wire::SigAck& ack) { tx_.on_ack(ack.next); }
  // Datagrams due now.
  std::vector<std::string> poll(milliseconds now);

  bool failed() const { return tx_.failed(); }
  bool idle() const { return tx_.idle(); }

 private:
  std::uint64_t conn_;
  Endpoint remote_;
  ArqSender tx_;
  ArqReceiver rx_;
};

}  // namespace lakegrid::overlay
