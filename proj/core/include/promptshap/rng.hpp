#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace promptshap {

/// SplitMix64 step; used to derive independent per-iteration seeds.
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministic engine for stream `index` of a run keyed by `seed`.
/// mt19937_64 output is pinned by the standard, so results are identical
/// across platforms and across how streams are scheduled onto threads.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1))));
}

/// Unbiased draw from [0, n) by rejection. std::uniform_int_distribution is
/// not specified bit-for-bit across standard libraries, so we roll our own.
inline std::uint64_t bounded_uniform(std::mt19937_64& engine, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine();
    } while (x >= limit);
    return x % n;
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void fisher_yates(std::span<T> items, std::mt19937_64& engine) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(bounded_uniform(engine, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Uniform double in [0, 1) from the upper 53 bits of a hash; platform-stable.
inline double unit_from_bits(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace promptshap
