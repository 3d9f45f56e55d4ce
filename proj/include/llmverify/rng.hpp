#pragma once

// Named, order-independent random streams. Every draw in a simulation is
// keyed by (root seed, labels...) so results never depend on scheduling.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace llmverify::rng {

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Incrementally builds a stream key from heterogeneous labels.
class StreamKey {
public:
    constexpr explicit StreamKey(std::uint64_t seed) noexcept : state_(mix(seed)) {}

    constexpr StreamKey& add(std::string_view label) noexcept {
        state_ = mix(state_ ^ fnv1a(label));
        return *this;
    }
    constexpr StreamKey& add(std::uint64_t value) noexcept {
        state_ = mix(state_ ^ mix(value + 0x632be59bd9b4e019ULL));
        return *this;
    }

    constexpr std::uint64_t value() const noexcept { return state_; }

    std::mt19937_64 engine() const { return std::mt19937_64(state_); }

private:
    std::uint64_t state_;
};

inline std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::string_view> labels) {
    StreamKey key(seed);
    for (auto l : labels) key.add(l);
    return key.engine();
}

}  // namespace llmverify::rng
