#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stids {

// All randomness in the library flows through these helpers so that a run is
// reproducible from a single seed and substreams (per epoch, per batch, per
// MC pass) can be derived by counter mixing instead of sequential draws.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(base);
    s = splitmix64(s ^ (a + 0x9e3779b97f4a7c15ULL));
    s = splitmix64(s ^ (b + 0xd1b54a32d192ed03ULL));
    s = splitmix64(s ^ (c + 0x8cb92ba72f3d8dd7ULL));
    return s;
}

inline std::mt19937_64 seeded_rng(uint64_t seed) { return std::mt19937_64(seed); }

// Uniform in [0, 1) with 53 random bits; bypasses the implementation-defined
// std::uniform_real_distribution so streams are identical across platforms.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Unbiased-enough bounded integer for shuffles and subsampling.
inline size_t bounded(std::mt19937_64& rng, size_t n) {
    return static_cast<size_t>(rng() % n);
}

// Box-Muller; one draw per call, the sine partner is discarded.
inline double normal01(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Portable Fisher-Yates.
template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = bounded(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace stids
