// SHA-256 digests (OpenSSL EVP), used for config digests and
// frozen-backbone checks.
#pragma once

#include <cstdint>
#include <string>

namespace iajepa {

class Sha256 {
  public:
    Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    ~Sha256();

    void reset();
    void update(const void* data, size_t len);
    // Finalizes and returns lowercase hex; reset() before reuse.
    std::string hex_digest();

    template <typename T>
    void update_value(const T& v) {
        update(&v, sizeof(T));
    }

  private:
    void* ctx_;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

}  // namespace iajepa
