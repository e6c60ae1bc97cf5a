#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedhbn {

// splitmix64, the usual seed-expansion step.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// One master seed fans out to every randomness source through this
// derivation: seed = splitmix64(master ^ splitmix64(hash(tag)) ^ mix(a) ^ mix(b)).
// Each (tag, a, b) triple is an independent, reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = master;
    h ^= splitmix64(hash_str(tag));
    h ^= splitmix64(a + 0x1ull);
    h ^= splitmix64(splitmix64(b + 0x2ull));
    return splitmix64(h);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace fedhbn
