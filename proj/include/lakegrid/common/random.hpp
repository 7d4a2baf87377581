#pragma once

#include <cstdint>
#include <string>

namespace lakegrid {

// Initializes libsodium once; safe to call repeatedly from any thread.
void ensure_crypto();

// Cryptographically secure entropy (libsodium). Throws Error(Internal) when
// the entropy source cannot be initialized.
void secure_random(void* out, std::size_t n);
std::string secure_random_bytes(std::size_t n);
std::uint64_t secure_random_u64();

std::string sha256(std::string_view data);

}  // namespace lakegrid
