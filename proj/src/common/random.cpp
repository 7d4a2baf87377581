#include "lakegrid/common/random.hpp"

#include <sodium.h>

#include "lakegrid/common/error.hpp"

namespace lakegrid {

void ensure_crypto() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error(ErrorKind::Internal, "entropy source unavailable");
}

void secure_random(void* out, std::size_t n) {
  ensure_crypto();
  randombytes_buf(out, n);
}

std::string secure_random_bytes(std::size_t n) {
  std::string out(n, '\0');
  secure_random(out.data(), n);
  return out;
}

std::uint64_t secure_random_u64() {
  std::uint64_t v = 0;
  secure_random(&v, sizeof(v));
  return v;
}

std::string sha256(std::string_view data) {
  ensure_crypto();
  std::string out(crypto_hash_sha256_BYTES, '\0');
  crypto_hash_sha256(reinterpret_cast<unsigned char*>(out.data()),
                     reinterpret_cast<const unsigned char*>(data.data()), data.size());
  return out;
}

}  // namespace lakegrid
