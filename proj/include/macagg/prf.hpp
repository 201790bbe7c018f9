#pragma once

// Keyed pseudorandom function used for tags, keystreams, masks and key
// derivation. Backed by OpenSSL's HMAC-SHA256; the keyed context is set up
// once and re-keyed per call.

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/params.h>

#include <array>
#include <initializer_list>
#include <memory>

#include "macagg/bytes.hpp"

namespace macagg {

class HmacSha256 {
 public:
  static constexpr std::size_t kOutputSize = 32;
  using Digest = std::array<std::uint8_t, kOutputSize>;

  explicit HmacSha256(ByteView key) : key_(key.begin(), key.end()) { init(); }

  HmacSha256(const HmacSha256& other) : key_(other.key_) { init(); }
  HmacSha256& operator=(const HmacSha256& other) {
    if (this != &other) {
      key_ = other.key_;
      init();
    }
    return *this;
  }
  HmacSha256(HmacSha256&&) noexcept = default;
  HmacSha256& operator=(HmacSha256&&) noexcept = default;

  Digest operator()(std::initializer_list<ByteView> parts) const {
    return digest(std::span<const ByteView>(parts.begin(), parts.size()));
  }

  Digest digest(std::span<const ByteView> parts) const {
    // Re-supplying the key: some 3.0.x releases do not reset the inner hash
    // on a null-key re-init.
    if (EVP_MAC_init(ctx_.get(), key_ptr(), key_.size(), nullptr) != 1) {
      throw Error("HMAC re-initialisation failed");
    }
    for (const auto& p : parts) {
      if (!p.empty() && EVP_MAC_update(ctx_.get(), p.data(), p.size()) != 1) {
        throw Error("HMAC update failed");
      }
    }
    Digest out{};
    std::size_t len = 0;
    if (EVP_MAC_final(ctx_.get(), out.data(), &len, out.size()) != 1 || len != out.size()) {
      throw Error("HMAC finalisation failed");
    }
    return out;
  }

  ByteView key() const { return key_; }

 private:
  struct MacDeleter {
    void operator()(EVP_MAC* m) const { EVP_MAC_free(m); }
  };
  struct CtxDeleter {
    void operator()(EVP_MAC_CTX* c) const { EVP_MAC_CTX_free(c); }
  };

  static EVP_MAC* hmac_algorithm() {
    static const std::unique_ptr<EVP_MAC, MacDeleter> alg(EVP_MAC_fetch(nullptr, "HMAC", nullptr));
    if (!alg) throw Error("OpenSSL HMAC unavailable");
    return alg.get();
  }

  // OpenSSL rejects a null key pointer even for empty keys.
  const std::uint8_t* key_ptr() const {
    static const std::uint8_t kEmpty = 0;
    return key_.empty() ? &kEmpty : key_.data();
  }

  void init() {
    ctx_.reset(EVP_MAC_CTX_new(hmac_algorithm()));
    if (!ctx_) throw Error("EVP_MAC_CTX_new failed");
    char digest_name[] = "SHA256";
    OSSL_PARAM params[] = {
        OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST, digest_name, 0),
        OSSL_PARAM_construct_end()};
    if (EVP_MAC_init(ctx_.get(), key_ptr(), key_.size(), params) != 1) {
      throw Error("HMAC key setup failed");
    }
  }

  Bytes key_;
  std::unique_ptr<EVP_MAC_CTX, CtxDeleter> ctx_;
};

// One-shot helper for key derivation and tests.
inline HmacSha256::Digest hmac_sha256(ByteView key, std::initializer_list<ByteView> parts) {
  return HmacSha256(key)(parts);
}

}  // namespace macagg
