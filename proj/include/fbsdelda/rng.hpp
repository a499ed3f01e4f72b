#pragma once

#include <cstdint>
#include <random>

namespace fbsdelda {

// splitmix64 finalizer (Vigna / SplittableRandom). Used to mix
// (seed, path, stream) keys into independent 64-bit substream seeds so
// that generation is reproducible regardless of scheduling order.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t path,
                                    std::uint64_t stream) {
    return mix64(mix64(mix64(seed) ^ path) ^ (stream * 0xd1342543de82ef95ULL));
}

inline std::mt19937_64 make_substream(std::uint64_t seed, std::uint64_t path,
                                      std::uint64_t stream) {
    return std::mt19937_64(substream_seed(seed, path, stream));
}

} // namespace fbsdelda
