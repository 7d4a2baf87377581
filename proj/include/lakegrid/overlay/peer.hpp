#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lakegrid/common/error.hpp"
#include "lakegrid/overlay/arq.hpp"
#include "lakegrid/overlay/crypto.hpp"
#include "lakegrid/overlay/endpoint.hpp"
#include "lakegrid/overlay/event_loop.hpp"
#include "lakegrid/overlay/nat.hpp"
#include "lakegrid/overlay/rendezvous.hpp"
#include "lakegrid/overlay/signal_channel.hpp"

namespace lakegrid::overlay {

enum class LinkKind { Direct, Relayed };
std::string_view to_string(LinkKind k);

struct LinkInfo {
  std::string remote;
  std::uint64_t link_id = 0;
  LinkKind kind = LinkKind::Direct;
  std::optional<Endpoint> relay;           // set for relayed links
  std::optional<Endpoint> remote_endpoint; // direct path in use
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t integrity_failures = 0;
};

struct PeerConfig {
  std::string peer_id;
  std::string group;
  Endpoint rendezvous;
  std::vector<Endpoint> reflectors;  // primary endpoint of each reflector
  std::optional<Endpoint> relay;
  bool encrypt = true;
  ArqConfig arq;
  std::chrono::milliseconds tick{10};
  std::chrono::milliseconds probe_timeout{80};
  int probe_attempts = 2;
  std::chrono::milliseconds punch_interval{20};
  std::chrono::milliseconds punch_timeout{500};
  std::chrono::milliseconds establish_timeout{5000};
  std::chrono::milliseconds join_timeout{3000};
  std::chrono::milliseconds ping_interval{500};
  std::chrono::milliseconds rejoin_backoff_max{2000};
  // Expected fingerprints (raw SHA-256) for specific peers; checked in
  // addition to the roster.
  std::map<std::string, std::string> pinned_fingerprints;
};

/// One overlay node. It classifies its NAT, registers with the rendezvous,
/// and maintains authenticated, encrypted, reliable message links to other
/// group members, direct when hole punching works and relayed otherwise.
///
/// Message and link handlers run on the node's loop thread; they must not
/// block on the node (establish, flush). send() is safe from any thread.
class Peer {
 public:
  using MessageHandler = std::function<void(const std::string& from, std::string payload)>;
  using LinkHandler = std::function<void(const std::string& peer, bool up)>;

  struct Stats {
    std::uint64_t integrity_failures = 0;
    std::uint64_t unknown_link_frames = 0;
    std::uint64_t handshake_failures = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t retransmissions = 0;
    std::uint64_t rejoins = 0;
    std::uint64_t dropped_sends = 0;
  };

  Peer(std::unique_ptr<DatagramSocket> socket, Identity identity, PeerConfig config);
  ~Peer();
  Peer(const Peer&) = delete;
  Peer& operator=(const Peer&) = delete;

  /// Classifies the NAT and registers. Returns the roster on success.
  /// Throws Error(Connectivity) if no reflector answers, Error(Transport)
  /// if the rendezvous is unreachable (retryable), Error(Conflict) when the
  /// peer_id is taken.
  std::vector<PeerDescriptor> start();
  void stop();

  const std::string& peer_id() const { return config_.peer_id; }
  PeerDescriptor descriptor() const;
  NatClass nat_class() const;
  bool registered() const;

  std::vector<PeerDescriptor> roster() const;
  bool wait_roster(const std::function<bool(const std::vector<PeerDescriptor>&)>& pred,
                   std::chrono::milliseconds timeout) const;

  /// Opens (or returns the existing) link to a roster member. Throws
  /// Error(Security) on handshake authentication failure and
  /// Error(Connectivity) when neither a direct nor a relayed path works.
  LinkInfo establish(const std::string& peer_id);
  std::optional<LinkInfo> link(const std::string& peer_id) const;

  /// Queues a message; returns its per-link message number. Throws
  /// Error(Transport) when no link to the peer is up.
  std::uint64_t send(const std::string& peer_id, std::string payload);
  /// Waits until every message queued to the peer is acknowledged.
  bool flush(const std::string& peer_id, std::chrono::milliseconds timeout);

  void set_message_handler(MessageHandler h);
  void set_link_handler(LinkHandler h);

  Stats stats() const;

 private:
  struct Link;
  struct UpEntry {
    std::uint64_t link_id = 0;
    LinkKind kind = LinkKind::Direct;
    std::uint64_t queued = 0;
    std::uint64_t acked = 0;
  };

  std::optional<wire::ProbeReply> probe(const Endpoint& to, bool change_ip, bool change_port);
  ProbeObservations run_probes(const Endpoint& reflector);

  void on_datagram(const Endpoint& from, std::string data);
  void on_sig_frame(const wire::SigFrame& f);
  void on_forwarded(const std::string& from, const std::string& payload);
  void on_offer(const std::string& from, const std::string& payload);
  void on_answer(const std::string& from, const std::string& payload);
  void on_select(const std::string& from, const std::string& payload);
  // Returns the sender's identity key; throws Error(Security).
  std::string verify_handshake(const std::string& from, const std::string& signed_text,
                               const std::string& claimed_key, const std::string& signature) const;
  std::string handshake_message(const Link& l, bool offer);
  void send_join();
  void sig_send(wire::SigType type, std::string body);
  void forward(const std::string& to, std::string payload);
  void tick();
  void tick_link(Link& l, std::chrono::milliseconds now);
  void send_frame(Link& l, const Endpoint& to, std::uint64_t seq, std::string plaintext);
  void on_link_frame(const Endpoint& from, const std::string& data);
  void link_up(Link& l, LinkKind kind);
  void link_down(std::uint64_t link_id, const Error& why);
  void fail_link(std::uint64_t link_id, const Error& why);
  std::optional<Endpoint> return_path(const Link& l) const;
  LinkInfo info_of(const Link& l) const;
  std::vector<std::string> my_candidates() const;
  void set_roster(const std::string& json_text);

  PeerConfig config_;
  Identity identity_;
  std::unique_ptr<DatagramSocket> socket_;
  Endpoint local_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  PeerDescriptor self_;
  bool registered_ = false;
  std::map<std::string, PeerDescriptor> roster_;
  std::map<std::string, UpEntry> up_;
  Stats stats_;
  MessageHandler message_handler_;
  LinkHandler link_handler_;
  std::map<std::uint64_t, std::optional<wire::ProbeReply>> probes_;
  std::optional<std::string> join_result_;  // empty string = joined, else reject reason

  // Loop-thread state.
  std::unique_ptr<SignalChannel> sig_;
  std::chrono::milliseconds last_ping_{0};
  std::chrono::milliseconds rejoin_at_{0};
  std::chrono::milliseconds rejoin_backoff_{0};
  bool started_ = false;
  std::map<std::uint64_t, std::unique_ptr<Link>> links_;
  std::map<std::string, std::uint64_t> by_peer_;
  std::atomic<bool> stopped_{false};

  EventLoop loop_;  // declared last: destroyed (joined) first
};

}  // namespace lakegrid::overlay
