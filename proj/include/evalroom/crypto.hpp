#pragma once

#include <string>
#include <string_view>

namespace evalroom {

std::string sha256_hex(std::string_view data);

/// `bytes` bytes from the OS CSPRNG, hex encoded.
std::string random_hex(std::size_t bytes);

/// PBKDF2-HMAC-SHA256 with a random salt, serialized as
/// "pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>".
std::string hash_secret(std::string_view secret);
bool verify_secret(std::string_view secret, std::string_view encoded);

} // namespace evalroom
