#include "evalroom/crypto.hpp"

#include <array>
#include <stdexcept>
#include <vector>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

namespace evalroom {

namespace {

constexpr int kIterations = 120'000;

std::string to_hex(const unsigned char* data, std::size_t size) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(size * 2);
    for (std::size_t i = 0; i < size; ++i) {
        out.push_back(kDigits[data[i] >> 4]);
        out.push_back(kDigits[data[i] & 0xf]);
    }
    return out;
}

std::vector<unsigned char> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw std::invalid_argument("odd hex length");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw std::invalid_argument("bad hex digit");
    };
    std::vector<unsigned char> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<unsigned char>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return out;
}

std::vector<unsigned char> derive(std::string_view secret, const std::vector<unsigned char>& salt, int iterations) {
    std::vector<unsigned char> key(32);
    if (PKCS5_PBKDF2_HMAC(secret.data(), static_cast<int>(secret.size()), salt.data(), static_cast<int>(salt.size()),
                          iterations, EVP_sha256(), static_cast<int>(key.size()), key.data()) != 1)
        throw std::runtime_error("PBKDF2 failed");
    return key;
}

} // namespace

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data());
    return to_hex(digest.data(), digest.size());
}

std::string random_hex(std::size_t bytes) {
    std::vector<unsigned char> buf(bytes);
    if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) throw std::runtime_error("RAND_bytes failed");
    return to_hex(buf.data(), buf.size());
}

std::string hash_secret(std::string_view secret) {
    const auto salt = from_hex(random_hex(16));
    const auto key = derive(secret, salt, kIterations);
    return "pbkdf2-sha256$" + std::to_string(kIterations) + "$" + to_hex(salt.data(), salt.size()) + "$" +
           to_hex(key.data(), key.size());
}

bool verify_secret(std::string_view secret, std::string_view encoded) {
    constexpr std::string_view kTag = "pbkdf2-sha256$";
    if (!encoded.starts_with(kTag)) return false;
    encoded.remove_prefix(kTag.size());
    const auto p1 = encoded.find('$');
    const auto p2 = encoded.find('$', p1 == std::string_view::npos ? p1 : p1 + 1);
    if (p1 == std::string_view::npos || p2 == std::string_view::npos) return false;
    try {
        const int iterations = std::stoi(std::string(encoded.substr(0, p1)));
        const auto salt = from_hex(encoded.substr(p1 + 1, p2 - p1 - 1));
        const auto expected = from_hex(encoded.substr(p2 + 1));
        if (iterations <= 0 || expected.size() != 32) return false;
        const auto actual = derive(secret, salt, iterations);
        return CRYPTO_memcmp(actual.data(), expected.data(), expected.size()) == 0;
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace evalroom
