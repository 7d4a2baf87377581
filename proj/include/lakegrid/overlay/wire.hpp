#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "lakegrid/overlay/endpoint.hpp"

namespace lakegrid::overlay::wire {

inline constexpr std::uint8_t kVersion = 1;

/// First byte of every datagram.
enum class Kind : std::uint8_t {
  Sig = 0x01,        // signaling segment: conn u64 | seq u64 | last u8 | bytes
  SigAck = 0x02,     // conn u64 | next expected u64
  Data = 0x10,       // link frame, see seal_frame
  Probe = 0x20,      // txn u64 | flags u8 (1 change ip, 2 change port)
  ProbeReply = 0x21, // txn u64 | mapped ip u32 port u16 | alternate ip u32 port u16
  RelayAlloc = 0x30, // link u64 | role u8
  RelayOk = 0x31,    // link u64 | role u8
};

std::optional<Kind> kind_of(std::string_view datagram);

struct SigSegment {
  std::uint64_t conn = 0;
  std::uint64_t seq = 0;
  bool last = false;
  std::string data;
};

struct SigAck {
  std::uint64_t conn = 0;
  std::uint64_t next = 0;
};

struct Probe {
  std::uint64_t txn = 0;
  bool change_ip = false;
  bool change_port = false;
};

struct ProbeReply {
  std::uint64_t txn = 0;
  Endpoint mapped;
  Endpoint alternate;
};

struct RelayAlloc {
  std::uint64_t link_id = 0;
  std::uint8_t role = 0;
};

// Decoders throw Error(Input) on malformed datagrams.
std::string encode(const SigSegment& s);
SigSegment decode_sig(std::string_view d);
std::string encode(const SigAck& a);
SigAck decode_sig_ack(std::string_view d);
std::string encode(const Probe& p);
Probe decode_probe(std::string_view d);
std::string encode(const ProbeReply& r);
ProbeReply decode_probe_reply(std::string_view d);
std::string encode_relay(Kind kind, const RelayAlloc& a);
RelayAlloc decode_relay(std::string_view d);

/// Signaling message types carried inside an ordered signaling channel.
enum class SigType : std::uint8_t {
  Join = 1,
  JoinOk = 2,
  Reject = 3,
  Roster = 4,
  Leave = 5,
  Ping = 6,
  Pong = 7,
  Forward = 8,
  Forwarded = 9,
  ForwardFailed = 10,
};

struct SigFrame {
  SigType type = SigType::Ping;
  std::string body;  // JSON text
};

// u32 length | u8 version | u8 type | body
std::string encode_frame(const SigFrame& f);
SigFrame decode_frame(std::string_view bytes);

/// Plaintext control byte at the start of a link frame's payload.
enum class Ctrl : std::uint8_t { Seg = 1, Ack = 2, Punch = 3, PunchAck = 4, Close = 5 };

inline constexpr std::size_t kHeaderBytes = 1 + 1 + 8 + 8;
inline constexpr std::size_t kNonceBytes = 24;
inline constexpr std::size_t kTagBytes = 16;

struct FrameHeader {
  std::uint64_t link_id = 0;
  std::uint64_t seq = 0;
};

/// kind | version | link_id | seq | nonce | ciphertext | tag. The header is
/// authenticated as associated data. With `encrypt` off the payload travels
/// in clear but is still authenticated.
std::string seal_frame(std::string_view key, const FrameHeader& header, std::string_view plaintext, bool encrypt);
// nullopt when authentication fails.
std::optional<std::string> open_frame(std::string_view key, std::string_view frame, bool encrypt);
// Throws Error(Input) when too short or of the wrong kind/version.
FrameHeader peek_header(std::string_view frame);

}  // namespace lakegrid::overlay::wire
