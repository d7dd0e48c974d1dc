#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace iql {

using Rng = std::mt19937_64;

/// splitmix64 step; used to derive independent stream seeds from one base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Engine for stream `stream` of base seed `seed`. Distinct streams are
/// statistically independent, so consumers can draw without coordinating.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x51ed2701ULL)));
}

/// Uniform double in [0, 1) with 53 random bits. One engine draw per call.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
inline int uniform_int(Rng& rng, int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    // rejection sampling keeps the draw exactly uniform
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<std::uint64_t>(n);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<int>(x % static_cast<std::uint64_t>(n));
}

/// Sample an index from an (approximately) normalized probability vector.
/// Consumes exactly one uniform draw.
inline int sample_categorical(std::span<const double> probs, Rng& rng) {
    if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    // u landed in the rounding slack past the last cumulative sum
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace iql
