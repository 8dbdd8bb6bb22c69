#pragma once

#include <cstdint>
#include <random>

namespace trajlab::rng {

// SplitMix64 step; used to whiten derived seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Independent generator for (seed, index). Workers can draw from their own
// stream without coordination, so results do not depend on execution order
// or worker count.
inline std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0xd1342543de82ef95ULL * (index + 1));
    const std::uint64_t a = splitmix64(s);
    const std::uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace trajlab::rng
