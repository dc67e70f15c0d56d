#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>

namespace nest {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator, so it plugs into
/// the <random> distributions. Cheap to construct, which matters because the
/// trainer builds one stream per (epoch, record).
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Derives an independent child seed from a parent seed and a list of tags.
/// Every stochastic routine in the library takes its seed through here so that
/// results are pure functions of (inputs, seed).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = splitmix64_mix(base ^ 0x6a09e667f3bcc908ULL);
    for (std::uint64_t t : tags) h = splitmix64_mix(h ^ splitmix64_mix(t + 0x3c6ef372fe94f82bULL));
    return h;
}

inline std::uint64_t hash_doubles(std::span<const double> values, std::uint64_t salt = 0) noexcept {
    std::uint64_t h = splitmix64_mix(salt);
    for (double v : values) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        h = splitmix64_mix(h ^ bits);
    }
    return h;
}

/// Standard normal draw. Box-Muller on the generator's uniform stream; unlike
/// std::normal_distribution it keeps no cached state and is identical across
/// standard library implementations.
inline double standard_normal(SplitMix64& gen) noexcept {
    double u1 = gen.uniform();
    while (u1 <= 0.0) u1 = gen.uniform();
    const double u2 = gen.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace nest
