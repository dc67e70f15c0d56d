#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "nest/sampling.hpp"

using namespace nest;

namespace {

// Star discrepancy over anchored boxes whose corners are taken from the
// point coordinates themselves (plus 1), open and closed counts.
double star_discrepancy(const std::vector<std::array<double, 2>>& pts) {
    std::vector<double> xs{1.0}, ys{1.0};
    for (const auto& p : pts) {
        xs.push_back(p[0]);
        ys.push_back(p[1]);
    }
    const double n = static_cast<double>(pts.size());
    double worst = 0.0;
    for (double a : xs)
        for (double b : ys) {
            int open = 0, closed = 0;
            for (const auto& p : pts) {
                if (p[0] < a && p[1] < b) ++open;
                if (p[0] <= a && p[1] <= b) ++closed;
            }
            worst = std::max({worst, a * b - open / n, closed / n - a * b});
        }
    return worst;
}

double min_pair_distance(const std::vector<Vector>& pts) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, (pts[i] - pts[j]).norm());
    return best;
}

}  // namespace

TEST(Sobol, KnownPoints) {
    EXPECT_DOUBLE_EQ(sobol_unit(1, 1)[0], 0.5);
    EXPECT_TRUE(sobol_unit(0, 3).isZero());
    const Vector p = sobol_point(1, 1, Bounds::uniform(1, -20.0, 20.0));
    EXPECT_DOUBLE_EQ(p[0], 0.0);
    // Second and third points of the unscrambled 2D sequence.
    EXPECT_DOUBLE_EQ(sobol_unit(2, 2)[0], 0.75);
    EXPECT_DOUBLE_EQ(sobol_unit(2, 2)[1], 0.25);
    EXPECT_DOUBLE_EQ(sobol_unit(3, 2)[0], 0.25);
    EXPECT_DOUBLE_EQ(sobol_unit(3, 2)[1], 0.75);
    EXPECT_THROW(sobol_unit(1, 0), Error);
    EXPECT_NO_THROW(sobol_unit(5, 21));
}

TEST(Sobol, InBounds) {
    Bounds b = Bounds::uniform(3, -1.0, 2.0);
    for (std::uint64_t i = 0; i < 500; ++i) EXPECT_TRUE(b.contains(sobol_point(i, 3, b)));
}

TEST(Sobol, LowerDiscrepancyThanUniform) {
    std::vector<std::array<double, 2>> sob;
    for (std::uint64_t i = 0; i < 256; ++i) {
        const Vector u = sobol_unit(i, 2);
        sob.push_back({u[0], u[1]});
    }
    double rnd = 0.0;
    for (int s = 0; s < 20; ++s) {
        std::mt19937_64 gen(static_cast<unsigned>(s));
        std::uniform_real_distribution<double> u;
        std::vector<std::array<double, 2>> pts;
        for (int i = 0; i < 256; ++i) pts.push_back({u(gen), u(gen)});
        rnd += star_discrepancy(pts) / 20.0;
    }
    EXPECT_LT(star_discrepancy(sob), rnd);
}

TEST(BlueNoise, Postconditions) {
    const Bounds b = Bounds::uniform(2, -1.0, 1.0);
    const BlueNoiseSet one = blue_noise_subsample(b, 1, 2, 3);
    ASSERT_EQ(one.points.size(), 1u);
    EXPECT_TRUE(b.contains(one.points[0]));
    const BlueNoiseSet set = blue_noise_subsample(b, 128, 2, 9);
    ASSERT_EQ(set.points.size(), 128u);
    EXPECT_GE(min_pair_distance(set.points), set.radius);
    for (const Vector& p : set.points) EXPECT_TRUE(b.contains(p));
    const BlueNoiseSet again = blue_noise_subsample(b, 128, 2, 9);
    for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(again.points[i], set.points[i]);
    EXPECT_THROW(blue_noise_subsample(b, 0, 2, 1), Error);
}

TEST(BlueNoise, SpreadsBetterThanUniform) {
    const Bounds b = Bounds::uniform(2, 0.0, 1.0);
    int wins = 0;
    for (int s = 0; s < 50; ++s) {
        const BlueNoiseSet set = blue_noise_subsample(b, 128, 2, 1000 + static_cast<std::uint64_t>(s));
        std::mt19937_64 gen(static_cast<unsigned>(s));
        std::uniform_real_distribution<double> u;
        std::vector<Vector> rnd;
        for (int i = 0; i < 128; ++i) rnd.push_back((Vector(2) << u(gen), u(gen)).finished());
        if (min_pair_distance(set.points) > min_pair_distance(rnd)) ++wins;
    }
    EXPECT_GE(wins, 45);
}

TEST(SnapToGrid, Examples) {
    const Bounds b = Bounds::uniform(1, 0.0, 1.0);
    EXPECT_NEAR(snap_to_grid(Vector::Constant(1, 0.3), 4, b)[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(snap_to_grid(Vector::Constant(1, 0.51), 4, b)[0], 2.0 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(snap_to_grid(Vector::Constant(1, 0.5), 2, b)[0], 0.0);
    EXPECT_DOUBLE_EQ(snap_to_grid(Vector::Constant(1, 1.0), 4, b)[0], 1.0);
    EXPECT_THROW(snap_to_grid(Vector::Constant(1, 0.5), 1, b), Error);
}

TEST(SnapToGrid, IdempotentAndNearest) {
    const Bounds b = Bounds::uniform(2, -20.0, 20.0);
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (int i = 0; i < 200; ++i) {
        const Vector x = (Vector(2) << u(gen), u(gen)).finished();
        const Vector s = snap_to_grid(x, 32, b);
        EXPECT_EQ(snap_to_grid(s, 32, b), s);
        for (int d = 0; d < 2; ++d)
            for (int k = 0; k < 32; ++k) {
                const double level = -20.0 + 40.0 * k / 31.0;
                EXPECT_LE(std::abs(s[d] - x[d]), std::abs(level - x[d]) + 1e-12);
            }
    }
}
