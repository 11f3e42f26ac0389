#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedlab::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a, so each textual purpose gets its own stream family.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Single documented fan-out rule: every consumer derives its seed from the
// master seed plus a purpose tag and optional indices (round, client, phase).
// Adding a new consumer therefore never shifts the draws of existing ones.
inline std::uint64_t derive(std::uint64_t master, std::string_view tag,
                            std::uint64_t a = 0, std::uint64_t b = 0,
                            std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(master ^ hash_tag(tag));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

inline std::mt19937_64 engine(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

} // namespace fedlab::rng
