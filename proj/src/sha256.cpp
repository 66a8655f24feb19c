#include "iajepa/sha256.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace iajepa {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_) throw std::runtime_error("sha256: context allocation failed");
    reset();
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::reset() {
    if (EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: init failed");
}

void Sha256::update(const void* data, size_t len) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1)
        throw std::runtime_error("sha256: update failed");
}

std::string Sha256::hex_digest() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out, &n) != 1)
        throw std::runtime_error("sha256: final failed");
    static const char* hexd = "0123456789abcdef";
    std::string hex(size_t(n) * 2, '0');
    for (unsigned int i = 0; i < n; ++i) {
        hex[2 * i] = hexd[out[i] >> 4];
        hex[2 * i + 1] = hexd[out[i] & 0xf];
    }
    return hex;
}

std::string sha256_hex(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex_digest();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

}  // namespace iajepa
