#pragma once

#include <cmath>
#include <cstdint>

namespace cfr {

// Counter-based random stream: every draw is a pure function of
// (seed, counter, index), so dropout masks and init values are
// reproducible across runs and platforms regardless of call order
// elsewhere in the program.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    std::uint64_t next_counter() { return counter++; }
};

namespace rng_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace rng_detail

inline std::uint64_t rng_bits(std::uint64_t seed, std::uint64_t counter, std::uint64_t index) {
    using rng_detail::splitmix64;
    return splitmix64(splitmix64(splitmix64(seed) ^ counter) ^ splitmix64(index ^ 0x5bf03635d1a4bd5cULL));
}

// Uniform in [0, 1).
inline double rng_uniform(std::uint64_t seed, std::uint64_t counter, std::uint64_t index) {
    return static_cast<double>(rng_bits(seed, counter, index) >> 11) * 0x1.0p-53;
}

// Box-Muller; one draw per index, cosine branch only.
inline double rng_normal(std::uint64_t seed, std::uint64_t counter, std::uint64_t index) {
    double u1 = rng_uniform(seed, counter, index * 2 + 1);
    double u2 = rng_uniform(seed, counter, index * 2 + 2);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace cfr
