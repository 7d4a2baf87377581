#include "lakegrid/overlay/crypto.hpp"

#include <sodium.h>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/random.hpp"

namespace lakegrid::overlay {

namespace {
const unsigned char* u8(std::string_view s) { return reinterpret_cast<const unsigned char*>(s.data()); }
unsigned char* u8(std::string& s) { return reinterpret_cast<unsigned char*>(s.data()); }
}  // namespace

Identity Identity::generate() { return from_seed(secure_random_bytes(crypto_sign_SEEDBYTES)); }

Identity Identity::from_seed(std::string_view seed) {
  ensure_crypto();
  if (seed.size() != crypto_sign_SEEDBYTES) throw Error(ErrorKind::Validation, "identity seed must be 32 bytes");
  Identity id;
  id.seed_ = std::string(seed);
  id.public_key_.assign(crypto_sign_PUBLICKEYBYTES, '\0');
  id.secret_key_.assign(crypto_sign_SECRETKEYBYTES, '\0');
  crypto_sign_seed_keypair(u8(id.public_key_), u8(id.secret_key_), u8(seed));
  return id;
}

std::string Identity::fingerprint() const { return fingerprint_of(public_key_); }

std::string Identity::sign(std::string_view message) const {
  std::string sig(crypto_sign_BYTES, '\0');
  crypto_sign_detached(u8(sig), nullptr, u8(message), message.size(), u8(secret_key_));
  return sig;
}

std::string fingerprint_of(std::string_view public_key) { return sha256(public_key); }

bool verify_signature(std::string_view public_key, std::string_view message, std::string_view signature) {
  ensure_crypto();
  if (public_key.size() != crypto_sign_PUBLICKEYBYTES || signature.size() != crypto_sign_BYTES) return false;
  return crypto_sign_verify_detached(u8(signature), u8(message), message.size(), u8(public_key)) == 0;
}

EphemeralKeys EphemeralKeys::generate() {
  ensure_crypto();
  EphemeralKeys k;
  k.public_key.assign(crypto_kx_PUBLICKEYBYTES, '\0');
  k.secret_key.assign(crypto_kx_SECRETKEYBYTES, '\0');
  crypto_kx_keypair(u8(k.public_key), u8(k.secret_key));
  return k;
}

SessionKeys derive_session(const EphemeralKeys& mine, std::string_view their_public, bool initiator) {
  if (their_public.size() != crypto_kx_PUBLICKEYBYTES) {
    throw Error(ErrorKind::Security, "peer ephemeral key has wrong length");
  }
  SessionKeys s;
  s.rx.assign(crypto_kx_SESSIONKEYBYTES, '\0');
  s.tx.assign(crypto_kx_SESSIONKEYBYTES, '\0');
  int rc = initiator ? crypto_kx_client_session_keys(u8(s.rx), u8(s.tx), u8(mine.public_key),
                                                     u8(mine.secret_key), u8(their_public))
                     : crypto_kx_server_session_keys(u8(s.rx), u8(s.tx), u8(mine.public_key),
                                                     u8(mine.secret_key), u8(their_public));
  if (rc != 0) throw Error(ErrorKind::Security, "key agreement rejected peer key");
  return s;
}

}  // namespace lakegrid::overlay
