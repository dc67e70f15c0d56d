#pragma once

// Space-filling utilities: Sobol points, blue-noise (dart-throwing) subsets and
// snapping to a discrete stimulus grid.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "nest/bounds.hpp"
#include "nest/errors.hpp"
#include "nest/rng.hpp"

namespace nest {

namespace detail {

struct SobolPoly {
    unsigned degree;
    unsigned a;
    std::array<unsigned, 8> m;
};

// Joe & Kuo (new-joe-kuo-6.21201), dimensions 2..21. Dimension 1 is the
// van der Corput sequence in base 2.
inline constexpr std::array<SobolPoly, 20> kSobolPolys{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
}};

inline constexpr unsigned kSobolBits = 32;

using DirectionTable = std::array<std::array<std::uint32_t, kSobolBits>, kSobolPolys.size() + 1>;

inline DirectionTable make_direction_table() {
    DirectionTable v{};
    for (unsigned i = 0; i < kSobolBits; ++i) v[0][i] = 1u << (31 - i);
    for (std::size_t d = 1; d < v.size(); ++d) {
        const SobolPoly& p = kSobolPolys[d - 1];
        const unsigned s = p.degree;
        for (unsigned i = 0; i < s; ++i) v[d][i] = p.m[i] << (31 - i);
        for (unsigned i = s; i < kSobolBits; ++i) {
            std::uint32_t vi = v[d][i - s] ^ (v[d][i - s] >> s);
            for (unsigned k = 1; k < s; ++k)
                if ((p.a >> (s - 1 - k)) & 1u) vi ^= v[d][i - k];
            v[d][i] = vi;
        }
    }
    return v;
}

inline const DirectionTable& direction_table() {
    static const DirectionTable table = make_direction_table();
    return table;
}

}  // namespace detail

inline constexpr int kSobolMaxDim = static_cast<int>(detail::kSobolPolys.size() + 1);

/// Unit-cube Sobol point in Gray-code order (index 0 is the origin, index 1
/// is (1/2, ..., 1/2)); matches the unscrambled sequence of common libraries.
inline Vector sobol_unit(std::uint64_t index, int dim) {
    if (dim < 1 || dim > kSobolMaxDim)
        fail(ErrorKind::InvalidDimension, "sobol supports 1.." + std::to_string(kSobolMaxDim) + " dimensions");
    if (index > std::numeric_limits<std::uint32_t>::max()) fail(ErrorKind::InvalidArgument, "sobol index overflow");
    const auto& v = detail::direction_table();
    const std::uint64_t gray = index ^ (index >> 1);
    Vector u(dim);
    for (int d = 0; d < dim; ++d) {
        std::uint32_t x = 0;
        for (unsigned bit = 0; bit < detail::kSobolBits; ++bit)
            if ((gray >> bit) & 1u) x ^= v[static_cast<std::size_t>(d)][bit];
        u[d] = static_cast<double>(x) * 0x1.0p-32;
    }
    return u;
}

inline Vector sobol_point(std::uint64_t index, int dim, const Bounds& bounds) {
    if (bounds.dim() != dim) fail(ErrorKind::Shape, "bounds dimension mismatch");
    return bounds.from_unit(sobol_unit(index, dim));
}

/// Sobol point with a Cranley-Patterson rotation by `shift` (mod 1).
inline Vector shifted_sobol_unit(std::uint64_t index, const Vector& shift) {
    Vector u = sobol_unit(index, static_cast<int>(shift.size())) + shift;
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] -= std::floor(u[i]);
    return u;
}

struct BlueNoiseSet {
    std::vector<Vector> points;
    double radius = 0.0;  // every pairwise distance is >= radius
};

/// Dart throwing with a radius that shrinks by 10% after `attempts` misses in
/// a row. Distances are measured in native units.
inline BlueNoiseSet blue_noise_subsample(const Bounds& bounds, int n, int dim, std::uint64_t seed, int attempts = 64) {
    if (n < 1) fail(ErrorKind::InvalidArgument, "blue noise needs n >= 1");
    if (bounds.dim() != dim) fail(ErrorKind::Shape, "bounds dimension mismatch");
    bounds.validate();
    SplitMix64 gen(derive_seed(seed, {0xb10e}));
    const Vector span = bounds.span();
    // Initial radius from the volume share of each point, generous by 2x.
    const double volume = span.prod();
    double radius = 2.0 * std::pow(volume / n, 1.0 / dim);

    BlueNoiseSet out;
    out.points.reserve(static_cast<std::size_t>(n));
    auto draw = [&] {
        Vector u(dim);
        for (int d = 0; d < dim; ++d) u[d] = gen.uniform();
        return bounds.from_unit(u);
    };
    int misses = 0;
    while (static_cast<int>(out.points.size()) < n) {
        Vector c = draw();
        bool ok = true;
        for (const Vector& p : out.points)
            if ((p - c).norm() < radius) {
                ok = false;
                break;
            }
        if (ok) {
            out.points.push_back(std::move(c));
            misses = 0;
        } else if (++misses >= attempts) {
            radius *= 0.9;
            misses = 0;
        }
    }
    out.radius = radius;
    return out;
}

/// Nearest level of the endpoint-inclusive uniform grid with n_sample levels
/// per dimension; exact ties go to the lower level.
inline Vector snap_to_grid(const Vector& x, int n_sample, const Bounds& bounds) {
    if (n_sample < 2) fail(ErrorKind::InvalidArgument, "grid needs at least two levels");
    if (x.size() != bounds.dim()) fail(ErrorKind::Shape, "point and bounds differ in dimension");
    Vector out(x.size());
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double lo = bounds.low[d], hi = bounds.high[d];
        const double step = (hi - lo) / (n_sample - 1);
        const double t = (std::clamp(x[d], lo, hi) - lo) / step;
        long k = static_cast<long>(std::floor(t));
        k = std::clamp(k, 0L, static_cast<long>(n_sample - 1));
        auto level = [&](long i) { return i == n_sample - 1 ? hi : std::fma(static_cast<double>(i), step, lo); };
        long best = k;
        if (k + 1 <= n_sample - 1 && std::abs(level(k + 1) - x[d]) < std::abs(level(k) - x[d])) best = k + 1;
        out[d] = level(best);
    }
    return out;
}

}  // namespace nest
