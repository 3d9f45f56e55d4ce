#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/sha.h>

#include "llmverify/error.hpp"
#include "llmverify/rng.hpp"

namespace llmverify {

inline std::string to_hex(const unsigned char* data, std::size_t len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (std::size_t i = 0; i < len; ++i) {
        out += digits[data[i] >> 4];
        out += digits[data[i] & 0xf];
    }
    return out;
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> md{};
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), md.data());
    return to_hex(md.data(), md.size());
}

/// Signs payloads on behalf of a registered identity.
class Signer {
public:
    virtual ~Signer() = default;
    virtual std::string sign(const std::string& signer_id, std::string_view payload) const = 0;
    virtual bool verify(const std::string& signer_id, std::string_view payload, std::string_view signature) const = 0;
};

/// HMAC-SHA256 with one shared secret per identity.
class HmacSigner final : public Signer {
public:
    void register_key(const std::string& signer_id, std::string key) { keys_[signer_id] = std::move(key); }

    /// Registers a key derived from `seed` for each id. Simulation only.
    template <typename Ids>
    static HmacSigner with_derived_keys(const Ids& ids, std::uint64_t seed) {
        HmacSigner s;
        for (const auto& id : ids) {
            const auto k = rng::StreamKey(seed).add("signing-key").add(id).value();
            s.register_key(id, std::to_string(k));
        }
        return s;
    }

    std::string sign(const std::string& signer_id, std::string_view payload) const override {
        auto it = keys_.find(signer_id);
        if (it == keys_.end()) throw NotFound("no signing key registered for " + signer_id);
        return mac(it->second, payload);
    }

    bool verify(const std::string& signer_id, std::string_view payload, std::string_view signature) const override {
        auto it = keys_.find(signer_id);
        if (it == keys_.end()) return false;
        const auto expected = mac(it->second, payload);
        return expected.size() == signature.size() &&
               CRYPTO_memcmp(expected.data(), signature.data(), expected.size()) == 0;
    }

private:
    static std::string mac(const std::string& key, std::string_view payload) {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
             reinterpret_cast<const unsigned char*>(payload.data()), payload.size(), md.data(), &len);
        return to_hex(md.data(), len);
    }

    std::map<std::string, std::string> keys_;
};

}  // namespace llmverify
