#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace lakegrid::overlay {

/// Long-term Ed25519 signing identity of a peer.
class Identity {
 public:
  static Identity generate();
  // 32-byte seed; the same seed always yields the same keys.
  static Identity from_seed(std::string_view seed);

  const std::string& public_key() const { return public_key_; }
  const std::string& seed() const { return seed_; }
  std::string fingerprint() const;
  std::string sign(std::string_view message) const;

 private:
  std::string seed_;
  std::string public_key_;
  std::string secret_key_;
};

// SHA-256 of the public key.
std::string fingerprint_of(std::string_view public_key);
bool verify_signature(std::string_view public_key, std::string_view message, std::string_view signature);

struct EphemeralKeys {
  std::string public_key;
  std::string secret_key;

  static EphemeralKeys generate();
};

struct SessionKeys {
  std::string rx;
  std::string tx;
};

// X25519 agreement; the initiator takes the client role. Throws
// Error(Security) when the peer's key is unusable.
SessionKeys derive_session(const EphemeralKeys& mine, std::string_view their_public, bool initiator);

}  // namespace lakegrid::overlay
