#include "lakegrid/overlay/wire.hpp"

#include <sodium.h>

#include "lakegrid/common/bytes.hpp"
#include "lakegrid/common/error.hpp"
#include "lakegrid/common/random.hpp"

namespace lakegrid::overlay::wire {

namespace {

const unsigned char* u8(std::string_view s) { return reinterpret_cast<const unsigned char*>(s.data()); }

ByteReader open_reader(std::string_view d, Kind expected) {
  ByteReader r(d);
  if (r.u8() != static_cast<std::uint8_t>(expected)) throw Error(ErrorKind::Input, "unexpected datagram kind");
  return r;
}

void endpoint_out(ByteWriter& w, const Endpoint& e) {
  w.u32(e.ip);
  w.u16(e.port);
}

Endpoint endpoint_in(ByteReader& r) {
  Endpoint e;
  e.ip = r.u32();
  e.port = r.u16();
  return e;
}

void finish(const ByteReader& r) {
  if (!r.done()) throw Error(ErrorKind::Input, "trailing datagram bytes");
}

}  // namespace

std::optional<Kind> kind_of(std::string_view d) {
  if (d.empty()) return std::nullopt;
  switch (static_cast<std::uint8_t>(d[0])) {
    case 0x01: return Kind::Sig;
    case 0x02: return Kind::SigAck;
    case 0x10: return Kind::Data;
    case 0x20: return Kind::Probe;
    case 0x21: return Kind::ProbeReply;
    case 0x30: return Kind::RelayAlloc;
    case 0x31: return Kind::RelayOk;
    default: return std::nullopt;
  }
}

std::string encode(const SigSegment& s) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::Sig));
  w.u64(s.conn);
  w.u64(s.seq);
  w.u8(s.last ? 1 : 0);
  w.raw(s.data);
  return w.take();
}

SigSegment decode_sig(std::string_view d) {
  auto r = open_reader(d, Kind::Sig);
  SigSegment s;
  s.conn = r.u64();
  s.seq = r.u64();
  s.last = r.u8() != 0;
  s.data = std::string(r.rest());
  return s;
}

std::string encode(const SigAck& a) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::SigAck));
  w.u64(a.conn);
  w.u64(a.next);
  return w.take();
}

SigAck decode_sig_ack(std::string_view d) {
  auto r = open_reader(d, Kind::SigAck);
  SigAck a;
  a.conn = r.u64();
  a.next = r.u64();
  finish(r);
  return a;
}

std::string encode(const Probe& p) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::Probe));
  w.u64(p.txn);
  w.u8(static_cast<std::uint8_t>((p.change_ip ? 1 : 0) | (p.change_port ? 2 : 0)));
  return w.take();
}

Probe decode_probe(std::string_view d) {
  auto r = open_reader(d, Kind::Probe);
  Probe p;
  p.txn = r.u64();
  auto flags = r.u8();
  p.change_ip = flags & 1;
  p.change_port = flags & 2;
  finish(r);
  return p;
}

std::string encode(const ProbeReply& rep) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::ProbeReply));
  w.u64(rep.txn);
  endpoint_out(w, rep.mapped);
  endpoint_out(w, rep.alternate);
  return w.take();
}

ProbeReply decode_probe_reply(std::string_view d) {
  auto r = open_reader(d, Kind::ProbeReply);
  ProbeReply rep;
  rep.txn = r.u64();
  rep.mapped = endpoint_in(r);
  rep.alternate = endpoint_in(r);
  finish(r);
  return rep;
}

std::string encode_relay(Kind kind, const RelayAlloc& a) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(kind));
  w.u64(a.link_id);
  w.u8(a.role);
  return w.take();
}

RelayAlloc decode_relay(std::string_view d) {
  ByteReader r(d);
  auto k = r.u8();
  if (k != static_cast<std::uint8_t>(Kind::RelayAlloc) && k != static_cast<std::uint8_t>(Kind::RelayOk)) {
    throw Error(ErrorKind::Input, "unexpected datagram kind");
  }
  RelayAlloc a;
  a.link_id = r.u64();
  a.role = r.u8();
  finish(r);
  if (a.role > 1) throw Error(ErrorKind::Input, "bad relay role");
  return a;
}

std::string encode_frame(const SigFrame& f) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(2 + f.body.size()));
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.raw(f.body);
  return w.take();
}

SigFrame decode_frame(std::string_view bytes) {
  ByteReader r(bytes);
  auto len = r.u32();
  if (len < 2 || len != r.remaining()) throw Error(ErrorKind::Input, "signaling frame length mismatch");
  if (r.u8() != kVersion) throw Error(ErrorKind::Input, "unsupported signaling version");
  auto t = r.u8();
  if (t < 1 || t > 10) throw Error(ErrorKind::Input, "unknown signaling type");
  SigFrame f;
  f.type = static_cast<SigType>(t);
  f.body = std::string(r.rest());
  return f;
}

std::string seal_frame(std::string_view key, const FrameHeader& header, std::string_view plaintext, bool encrypt) {
  ensure_crypto();
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::Data));
  w.u8(kVersion);
  w.u64(header.link_id);
  w.u64(header.seq);
  std::string nonce = secure_random_bytes(kNonceBytes);
  w.raw(nonce);
  auto out = w.take();
  const std::size_t body_at = out.size();
  out.resize(body_at + plaintext.size() + kTagBytes);
  auto* body = reinterpret_cast<unsigned char*>(out.data() + body_at);
  if (encrypt) {
    unsigned long long clen = 0;
    crypto_aead_xchacha20poly1305_ietf_encrypt(body, &clen, u8(plaintext), plaintext.size(), u8(out),
                                               kHeaderBytes, nullptr, u8(nonce), u8(key));
  } else {
    std::copy(plaintext.begin(), plaintext.end(), body);
    unsigned char mac[crypto_auth_hmacsha256_BYTES];
    crypto_auth_hmacsha256(mac, u8(out), body_at + plaintext.size(), u8(key));
    std::copy(mac, mac + kTagBytes, body + plaintext.size());
  }
  return out;
}

std::optional<std::string> open_frame(std::string_view key, std::string_view frame, bool encrypt) {
  ensure_crypto();
  const std::size_t body_at = kHeaderBytes + kNonceBytes;
  if (frame.size() < body_at + kTagBytes) return std::nullopt;
  auto nonce = frame.substr(kHeaderBytes, kNonceBytes);
  auto body = frame.substr(body_at);
  std::string plain(body.size() - kTagBytes, '\0');
  if (encrypt) {
    unsigned long long mlen = 0;
    if (crypto_aead_xchacha20poly1305_ietf_decrypt(reinterpret_cast<unsigned char*>(plain.data()), &mlen,
                                                   nullptr, u8(body), body.size(), u8(frame), kHeaderBytes,
                                                   u8(nonce), u8(key)) != 0) {
      return std::nullopt;
    }
    return plain;
  }
  unsigned char mac[crypto_auth_hmacsha256_BYTES];
  crypto_auth_hmacsha256(mac, u8(frame), frame.size() - kTagBytes, u8(key));
  if (sodium_memcmp(mac, u8(frame.substr(frame.size() - kTagBytes)), kTagBytes) != 0) return std::nullopt;
  return std::string(body.substr(0, body.size() - kTagBytes));
}

FrameHeader peek_header(std::string_view frame) {
  if (frame.size() < kHeaderBytes + kNonceBytes + kTagBytes) throw Error(ErrorKind::Input, "short link frame");
  ByteReader r(frame);
  if (r.u8() != static_cast<std::uint8_t>(Kind::Data)) throw Error(ErrorKind::Input, "not a link frame");
  if (r.u8() != kVersion) throw Error(ErrorKind::Input, "unsupported link frame version");
  FrameHeader h;
  h.link_id = r.u64();
  h.seq = r.u64();
  return h;
}

}  // namespace lakegrid::overlay::wire
