#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace embb {

// The standard engines are fully specified, the standard distributions are
// not; everything drawn here goes through the helpers below so results are
// identical across standard libraries.
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    return splitmix64(seed ^ splitmix64(salt));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng &rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), unbiased (rejection on the tail).
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

// Uniform real in [lo, hi).
inline double uniform_real(Rng &rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

} // namespace embb
