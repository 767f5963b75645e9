#pragma once

#include <cstdint>
#include <random>

namespace posediff {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Independent deterministic stream derived from (seed, stream). Used so
/// per-example training noise and per-sample solver noise do not depend on
/// batch order or worker scheduling.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
    uint64_t s = seed ^ (0x6a09e667f3bcc909ull + stream * 0x9e3779b97f4a7c15ull);
    uint64_t a = splitmix64(s);
    uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
                      static_cast<uint32_t>(b), static_cast<uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace posediff
