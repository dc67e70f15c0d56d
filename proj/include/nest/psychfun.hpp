#pragma once

// Ground-truth synthetic psychometric functions and a simulated Bernoulli
// observer.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>

#include "nest/bounds.hpp"
#include "nest/errors.hpp"
#include "nest/rng.hpp"

namespace nest {

/// Standard normal CDF through erfc (accurate in both tails).
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// exp(-10^(beta * d / 20)): the Weibull survival factor used by all
/// Weibull-family ground truths.
inline double weibull_factor(double beta, double d) { return std::exp(-std::exp(beta * d * std::numbers::ln10 / 20.0)); }

struct WeibullKD {
    Vector beta;
    Vector threshold;
};
struct Sin2D {
    double amplitude = 8.0;
    double frequency = 1.0;
    double beta = 2.0;
};
struct Max2D {
    double c0 = 0.0;
    double c_f = 10.0;
    double t = -5.0;
    double beta = 2.0;
};
struct Donut2D {
    double beta = 2.0;
    double r1 = 6.0;
    double r2 = 14.0;
};
struct Novel2D {};
struct Hartmann6 {};
struct PS8D {};
struct Sphere {
    double beta = 2.0;
    double radius = 10.0;
};
/// Constant 0.5 observer used as the Fisher-energy calibration baseline.
struct RandomObserver {};

using FunctionParams = std::variant<WeibullKD, Sin2D, Max2D, Donut2D, Novel2D, Hartmann6, PS8D, Sphere, RandomObserver>;

struct SyntheticFunction {
    FunctionParams params;
    double alpha = 0.0;
    double gamma_lapse = 0.0;
    Bounds bounds;

    int dim() const { return bounds.dim(); }
};

namespace hartmann6 {
inline constexpr std::array<double, 4> kAlpha{2.0, 2.2, 2.8, 3.0};
inline constexpr std::array<std::array<double, 6>, 4> kA{{
    {8, 3, 10, 3.5, 1.7, 6},
    {0.5, 8, 10, 1.0, 6, 9},
    {3, 3.5, 1.7, 8, 10, 6},
    {10, 6, 0.5, 8, 1.0, 9},
}};
inline constexpr std::array<std::array<double, 6>, 4> kP{{
    {1312e-4, 1696e-4, 5569e-4, 124e-4, 8283e-4, 5886e-4},
    {2329e-4, 4135e-4, 8307e-4, 3736e-4, 1004e-4, 9991e-4},
    {2348e-4, 1451e-4, 3522e-4, 2883e-4, 3047e-4, 6650e-4},
    {4047e-4, 8828e-4, 8732e-4, 5743e-4, 1091e-4, 381e-4},
}};

/// h(x) = 1 - sum_i alpha_i exp(-sum_j A_ij (x_j - P_ij)^2)
inline double h(const Vector& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        double e = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            const double d = x[static_cast<Eigen::Index>(j)] - kP[i][j];
            e += kA[i][j] * d * d;
        }
        s += kAlpha[i] * std::exp(-e);
    }
    return 1.0 - s;
}
}  // namespace hartmann6

// ---- threshold helpers (exposed for direct testing) ----

inline double sin2d_threshold(double x0, double amplitude, double frequency) {
    return amplitude * std::sin(2.0 * std::numbers::pi * frequency * x0);
}

inline double max2d_threshold(double x0, double c0, double c_f, double t) { return std::max(t, c0 + c_f * x0); }

inline double donut_threshold(double radius, double r1, double r2) { return std::max(radius - r2, r1 - radius); }

inline double novel2d_threshold(double x0, double x1, double alpha) {
    const double q = 0.2 * x0 - 1.0;
    return 4.0 * (1.0 - alpha) * (1.0 + x1) / (0.1 + 0.8 * q * q * x0 * x0) - 4.0 * (1.0 - 2.0 * alpha);
}

inline double ps8d_c(const Vector& x) {
    // x is zero-based; the closed form is written with one-based x1..x8.
    const double x2 = x[1], x3 = x[2], x4 = x[3], x6 = x[5], x7 = x[6], x8 = x[7];
    const double pi = std::numbers::pi;
    return (x3 / 2.0 * (1.0 - std::cos(0.6 * pi * x2 * x8 + x7)) + x4) * (2.0 - x6 * (1.0 + std::sin(0.3 * pi * x2 * x8 + x7))) - 1.0;
}

inline constexpr double kPs8dDenominatorFloor = 1e-6;

inline double ps8d_argument(const Vector& x) {
    const double c = ps8d_c(x);
    double denom = x[4] * (2.0 + c);
    if (std::abs(denom) < kPs8dDenominatorFloor) denom = denom < 0.0 ? -kPs8dDenominatorFloor : kPs8dDenominatorFloor;
    return (x[0] - c) / denom;
}

/// Unscaled response probability in [0, 1] before the alpha/gamma band.
inline double base_probability(const SyntheticFunction& fn, const Vector& x) {
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, WeibullKD>) {
                double prod = 1.0;
                for (Eigen::Index k = 0; k < x.size(); ++k) prod *= weibull_factor(p.beta[k], x[k] - p.threshold[k]);
                return prod;
            } else if constexpr (std::is_same_v<T, Sin2D>) {
                return weibull_factor(p.beta, x[1] - sin2d_threshold(x[0], p.amplitude, p.frequency));
            } else if constexpr (std::is_same_v<T, Max2D>) {
                return weibull_factor(p.beta, x[1] - max2d_threshold(x[0], p.c0, p.c_f, p.t));
            } else if constexpr (std::is_same_v<T, Donut2D>) {
                return weibull_factor(p.beta, donut_threshold(x.norm(), p.r1, p.r2));
            } else if constexpr (std::is_same_v<T, Novel2D>) {
                return normal_cdf(novel2d_threshold(x[0], x[1], fn.alpha));
            } else if constexpr (std::is_same_v<T, Hartmann6>) {
                return normal_cdf(3.0 * hartmann6::h(x) - 2.0);
            } else if constexpr (std::is_same_v<T, PS8D>) {
                return normal_cdf(ps8d_argument(x));
            } else if constexpr (std::is_same_v<T, Sphere>) {
                return weibull_factor(p.beta, x.norm() - p.radius);
            } else {
                return 0.5;
            }
        },
        fn.params);
}

/// Ground-truth probability alpha + (1 - alpha - gamma) * base(x).
inline double eval_truth(const SyntheticFunction& fn, const Vector& x) {
    if (x.size() != fn.dim()) fail(ErrorKind::Shape, "stimulus dimension does not match the function");
    if (!fn.bounds.contains(x, 1e-12)) fail(ErrorKind::Domain, "stimulus outside the function domain");
    if (std::holds_alternative<RandomObserver>(fn.params)) return 0.5;
    return fn.alpha + (1.0 - fn.alpha - fn.gamma_lapse) * base_probability(fn, x);
}

inline int sample_response(const SyntheticFunction& fn, const Vector& x, SplitMix64& rng) {
    const double p = eval_truth(fn, x);
    return rng.uniform() < p ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Named families, canonical parameter sets and randomization

enum class Family { Wei1D, Wei2D, Wei3D, Wei4D, Sin2D, Max2D, Donut2D, Novel2D, Hartmann6, PS8D, Sphere, Random };

enum class Mode { Detection, Discrimination };

inline double mode_alpha(Mode m) { return m == Mode::Detection ? 0.0 : 0.5; }

inline const char* family_name(Family f) {
    switch (f) {
        case Family::Wei1D: return "wei1d";
        case Family::Wei2D: return "wei2d";
        case Family::Wei3D: return "wei3d";
        case Family::Wei4D: return "wei4d";
        case Family::Sin2D: return "sin2d";
        case Family::Max2D: return "max2d";
        case Family::Donut2D: return "dn2d";
        case Family::Novel2D: return "nv2d";
        case Family::Hartmann6: return "hart6";
        case Family::PS8D: return "ps8d";
        case Family::Sphere: return "sphere";
        case Family::Random: return "random";
    }
    return "unknown";
}

inline Family parse_family(const std::string& name) {
    for (Family f : {Family::Wei1D, Family::Wei2D, Family::Wei3D, Family::Wei4D, Family::Sin2D, Family::Max2D,
                     Family::Donut2D, Family::Novel2D, Family::Hartmann6, Family::PS8D, Family::Sphere, Family::Random})
        if (name == family_name(f)) return f;
    fail(ErrorKind::Config, "unknown function '" + name + "'");
}

inline Mode parse_mode(const std::string& name) {
    if (name == "detection") return Mode::Detection;
    if (name == "discrimination") return Mode::Discrimination;
    fail(ErrorKind::Config, "unknown mode '" + name + "'");
}

inline const char* mode_name(Mode m) { return m == Mode::Detection ? "detection" : "discrimination"; }

/// Half-width of the native domain used by the Weibull-family functions.
inline constexpr double kWeibullHalfSpan = 20.0;

/// Default dimension of a family; `dims` overrides it for Sphere and Random.
inline int family_dim(Family f, int dims = 0) {
    switch (f) {
        case Family::Wei1D: return 1;
        case Family::Wei2D: return 2;
        case Family::Wei3D: return 3;
        case Family::Wei4D: return 4;
        case Family::Sin2D:
        case Family::Max2D:
        case Family::Donut2D:
        case Family::Novel2D: return 2;
        case Family::Hartmann6: return 6;
        case Family::PS8D: return 8;
        case Family::Sphere:
        case Family::Random: return dims > 0 ? dims : 2;
    }
    return 2;
}

inline Bounds family_bounds(Family f, int dim) {
    switch (f) {
        case Family::Novel2D: return Bounds::uniform(2, -1.0, 1.0);
        case Family::Hartmann6: return Bounds::uniform(6, 0.0, 1.0);
        case Family::PS8D: return Bounds::uniform(8, -1.0, 1.0);
        case Family::Random: return Bounds::uniform(dim, -1.0, 1.0);
        case Family::Sin2D: {
            Bounds b = Bounds::uniform(2, -kWeibullHalfSpan, kWeibullHalfSpan);
            b.low[0] = 0.0;
            b.high[0] = 1.0;
            return b;
        }
        case Family::Max2D: {
            Bounds b = Bounds::uniform(2, -kWeibullHalfSpan, kWeibullHalfSpan);
            b.low[0] = -1.0;
            b.high[0] = 1.0;
            return b;
        }
        default: return Bounds::uniform(dim, -kWeibullHalfSpan, kWeibullHalfSpan);
    }
}

/// Fixed parameter set per family (used for reproducible benchmarks).
inline SyntheticFunction canonical_function(Family f, Mode mode, int dims = 0) {
    const int dim = family_dim(f, dims);
    SyntheticFunction fn;
    fn.alpha = mode_alpha(mode);
    fn.bounds = family_bounds(f, dim);
    switch (f) {
        case Family::Wei1D:
        case Family::Wei2D:
        case Family::Wei3D:
        case Family::Wei4D: fn.params = WeibullKD{Vector::Constant(dim, 2.0), Vector::Zero(dim)}; break;
        case Family::Sin2D: fn.params = Sin2D{}; break;
        case Family::Max2D: fn.params = Max2D{}; break;
        case Family::Donut2D: fn.params = Donut2D{}; break;
        case Family::Novel2D: fn.params = Novel2D{}; break;
        case Family::Hartmann6: fn.params = Hartmann6{}; break;
        case Family::PS8D: fn.params = PS8D{}; break;
        case Family::Sphere: fn.params = Sphere{2.0, 0.25 * fn.bounds.span()[0]}; break;
        case Family::Random: fn.params = RandomObserver{}; break;
    }
    return fn;
}

/// Uniform ranges for parameter randomization.
struct RandomizationRanges {
    double threshold_central_fraction = 0.6;
    double beta_low = 0.5, beta_high = 4.0;
    double sin_amp_low = 0.1, sin_amp_high = 0.4;  // times the x1 span
    double sin_freq_low = 0.5, sin_freq_high = 2.0;
    double max_scale = 0.6;                         // times the x1 half-span
    double donut_r1_low = 0.15, donut_r1_high = 0.3;  // times the span
    double donut_gap_low = 0.15, donut_gap_high = 0.3;
};

inline SyntheticFunction randomize_params(Family f, SplitMix64& rng, Mode mode, int dims = 0,
                                          const RandomizationRanges& r = {}) {
    SyntheticFunction fn = canonical_function(f, mode, dims);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    const Vector span = fn.bounds.span();
    switch (f) {
        case Family::Wei1D:
        case Family::Wei2D:
        case Family::Wei3D:
        case Family::Wei4D: {
            WeibullKD p{Vector(fn.dim()), Vector(fn.dim())};
            for (int k = 0; k < fn.dim(); ++k) {
                const double mid = 0.5 * (fn.bounds.low[k] + fn.bounds.high[k]);
                const double half = 0.5 * r.threshold_central_fraction * span[k];
                p.threshold[k] = uni(mid - half, mid + half);
                p.beta[k] = uni(r.beta_low, r.beta_high);
            }
            fn.params = p;
            break;
        }
        case Family::Sin2D:
            fn.params = Sin2D{uni(r.sin_amp_low, r.sin_amp_high) * span[1], uni(r.sin_freq_low, r.sin_freq_high),
                              uni(r.beta_low, r.beta_high)};
            break;
        case Family::Max2D: {
            const double s = r.max_scale * 0.5 * span[1];
            fn.params = Max2D{uni(-s, s), uni(-s, s), uni(-s, s), uni(r.beta_low, r.beta_high)};
            break;
        }
        case Family::Donut2D: {
            const double r1 = uni(r.donut_r1_low, r.donut_r1_high) * span[0];
            const double r2 = r1 + uni(r.donut_gap_low, r.donut_gap_high) * span[0];
            fn.params = Donut2D{uni(r.beta_low, r.beta_high), r1, r2};
            break;
        }
        case Family::Sphere:
            fn.params = Sphere{uni(r.beta_low, r.beta_high), 0.25 * span[0]};
            break;
        default: break;
    }
    return fn;
}

}  // namespace nest
