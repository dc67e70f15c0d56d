#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nest/acquisition.hpp"
#include "reference.hpp"

using namespace nest;

namespace {

TrialDataset toy_dataset(int n, std::uint64_t seed) {
    TrialDataset d(Bounds::uniform(2, -20.0, 20.0));
    SplitMix64 gen(seed);
    for (int i = 0; i < n; ++i) {
        Vector x(2);
        x << -20.0 + 40.0 * gen.uniform(), -20.0 + 40.0 * gen.uniform();
        d.records.push_back({x, x.sum() < 0.0 ? 1 : 0});
    }
    const NormStats s = compute_norm_stats(d.records);
    d.norm_mean = s.mean;
    d.norm_std = s.std;
    return d;
}

AcquisitionConfig small_config() {
    AcquisitionConfig c;
    c.candidate_count = 64;
    c.restarts = 4;
    c.lookahead_subsample = 16;
    c.mc_samples = 20;
    c.exploration = {0.0, 0.97, 0.0};
    return c;
}

// Solves A z = r by Gaussian elimination with partial pivoting.
std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> r) {
    const std::size_t n = r.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t i = c + 1; i < n; ++i)
            if (std::abs(a[i][c]) > std::abs(a[piv][c])) piv = i;
        std::swap(a[c], a[piv]);
        std::swap(r[c], r[piv]);
        for (std::size_t i = c + 1; i < n; ++i) {
            const double f = a[i][c] / a[c][c];
            for (std::size_t j = c; j < n; ++j) a[i][j] -= f * a[c][j];
            r[i] -= f * r[c];
        }
    }
    std::vector<double> z(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = r[i];
        for (std::size_t j = i + 1; j < n; ++j) acc -= a[i][j] * z[j];
        z[i] = acc / a[i][i];
    }
    return z;
}

// Kernel regression from explicit flat gradients of the loop reference.
std::vector<double> kernel_regression(const NetworkState& net, const TrialDataset& d, const Vector& x_new, int y_new,
                                      const std::vector<Vector>& us, const PsychScaleConfig& s, double jitter) {
    const ref::Net r = ref::Net::from(net);
    std::vector<std::vector<double>> ones;
    for (std::size_t l = 1; l + 1 < net.layer_sizes.size(); ++l) ones.emplace_back(static_cast<std::size_t>(net.layer_sizes[l]), 1.0);
    auto norm = [&](const Vector& x) {
        const Vector z = (x - d.norm_mean).cwiseQuotient(d.norm_std);
        return std::vector<double>(z.data(), z.data() + z.size());
    };
    auto grad = [&](const std::vector<double>& z) {
        std::vector<double> g = ref::raw_param_gradient(r, z, ones);
        const double k = ref::dprob_draw(ref::raw(r, z), s);
        for (double& v : g) v *= k;
        return g;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
        return acc;
    };
    std::vector<std::vector<double>> xs, gs;
    std::vector<double> ys;
    for (const auto& rec : d.records) {
        xs.push_back(norm(rec.stimulus));
        ys.push_back(rec.response);
    }
    xs.push_back(norm(x_new));
    ys.push_back(y_new);
    for (const auto& z : xs) gs.push_back(grad(z));
    const std::size_t n = xs.size();
    std::vector<std::vector<double>> k(n, std::vector<double>(n));
    std::vector<double> res(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) k[i][j] = dot(gs[i], gs[j]) + (i == j ? jitter : 0.0);
        res[i] = ys[i] - ref::prob(r, xs[i], s);
    }
    const std::vector<double> coef = gauss_solve(k, res);
    std::vector<double> out;
    for (const Vector& u : us) {
        const std::vector<double> zu = norm(u), gu = grad(zu);
        double v = ref::prob(r, zu, s);
        for (std::size_t i = 0; i < n; ++i) v += dot(gu, gs[i]) * coef[i];
        out.push_back(v);
    }
    return out;
}

}  // namespace

TEST(Proximity, Density) {
    const Vector x = Vector::Zero(2);
    const std::vector<Vector> one{x};
    EXPECT_NEAR(prox_density(x, one, 0.25), 1.0 / (0.0625 * 2.0 * std::numbers::pi), 1e-12);
    EXPECT_NEAR(prox_density(x, one, 0.25), 2.5464791, 1e-7);
    const std::vector<Vector> far{Vector::Constant(2, 2.5 / std::sqrt(2.0))};
    EXPECT_LT(prox_density(x, far, 0.25), 1e-20 * prox_density(x, one, 0.25));
    const Vector a = (Vector(2) << 0.3, 0.1).finished();
    EXPECT_NEAR(prox_density(x, std::vector<Vector>{a, Vector(-a)}, 0.25), prox_density(x, std::vector<Vector>{a}, 0.25), 1e-15);
    EXPECT_THROW(prox_density(x, std::vector<Vector>{}, 0.25), Error);
}

TEST(Proximity, Component) {
    EXPECT_EQ(prox_component(3.0, 3.0), 0.0);
    EXPECT_EQ(prox_component(0.0, 3.0), 1.0);
    EXPECT_DOUBLE_EQ(prox_component(1.5, 3.0), 0.5);
    EXPECT_EQ(prox_component(0.0, 0.0), 1.0);
}

TEST(Components, RatioAndDegenerate) {
    EXPECT_EQ(ratio_component(2.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(ratio_component(0.3, 1.0), 0.3);
    EXPECT_EQ(ratio_component(0.5, 1e-13), 1.0);
    EXPECT_EQ(ratio_component(5.0, 1.0), 1.0);
}

TEST(Components, GradientOfLinearNet) {
    // No hidden layer: raw = w x + b, so |dq/dx| = dq/draw(raw) |w|.
    NetworkState n;
    n.layer_sizes = {1, 1};
    n.weights = {Matrix::Constant(1, 1, 1.5)};
    n.biases = {Vector::Constant(1, -0.5)};
    const PsychScaleConfig s{0.5, 0.0};
    const Vector xstar = Vector::Constant(1, 0.2);
    const double norm = input_gradient(n, xstar, s).norm();
    for (double x : {-1.0, 0.0, 0.7, 2.0}) {
        const double expect = ref::dprob_draw(1.5 * x - 0.5, s) / ref::dprob_draw(1.5 * 0.2 - 0.5, s);
        EXPECT_NEAR(grad_component(n, Vector::Constant(1, x), s, norm), std::min(1.0, expect), 1e-12);
    }
    EXPECT_DOUBLE_EQ(grad_component(n, xstar, s, norm), 1.0);
}

TEST(Components, ConstantNetworkIsNeutral) {
    NetworkState n = init_network({2, 4, 1}, 1);
    for (auto& w : n.weights) w.setZero();
    for (auto& b : n.biases) b.setZero();
    const Vector x = Vector::Ones(2);
    EXPECT_EQ(grad_component(n, x, {}, input_gradient(n, x, {}).norm()), 1.0);
    EXPECT_EQ(unc_component(n, x, {}, 10, 1, 0.0, 0.0), 1.0);
}

TEST(Combine, Rules) {
    const AcquisitionWeights w;
    EXPECT_EQ(combine({1, 1, 1, 1}, w), 1.0);
    EXPECT_EQ(combine({1, 0, 1, 1}, w), 0.0);
    EXPECT_NEAR(combine({0.25, 0.25, 0.25, 0.25}, {0.3, 2.0, 5.0, 0.1}), 0.25, 1e-15);
    EXPECT_NEAR(combine({0.0, 0.5, 0.5, 0.5}, {0.0, 1.0, 1.0, 1.0}), 0.5, 1e-15);
    const Components c{0.9, 0.2, 0.6, 0.4};
    EXPECT_NEAR(combine(c, w), combine(c, {0.8 * 3, 10.6 * 3, 6.0 * 3, 4.0 * 3}), 1e-14);
    EXPECT_NEAR(combine(c, {1, 0, 0, 0}), 0.9, 1e-15);
}

TEST(Exploration, Schedule) {
    const ExplorationSchedule s;
    EXPECT_DOUBLE_EQ(exploration_probability(1, s), 0.5);
    EXPECT_DOUBLE_EQ(exploration_probability(2, s), 0.485);
    EXPECT_NEAR(0.5 * std::pow(0.97, 76), 0.0494, 1e-4);
    EXPECT_DOUBLE_EQ(exploration_probability(77, s), 0.05);
    EXPECT_THROW(exploration_probability(0, s), Error);
}

TEST(Lookahead, MatchesKernelRegressionOracle) {
    const NetworkState net = init_network({2, 16, 8, 1}, 4);
    const TrialDataset d = toy_dataset(5, 2);
    const PsychScaleConfig s{0.5, 0.01};
    const Vector xn = (Vector(2) << 3.0, -7.0).finished();
    const std::vector<Vector> us = blue_noise_subsample(d.bounds, 12, 2, 3).points;
    for (int y : {0, 1}) {
        const Vector got = ntk_lookahead_predict(net, d, xn, y, us, s, 1e-6);
        const std::vector<double> want = kernel_regression(net, d, xn, y, us, s, 1e-6);
        for (std::size_t i = 0; i < us.size(); ++i) EXPECT_NEAR(got[static_cast<Eigen::Index>(i)], want[i], 1e-8);
    }
}

TEST(Lookahead, SingleLinearLayerClosedForm) {
    // raw = w.x + b, one training point: the kernel is dq(a) dq(b) (a.b + 1).
    NetworkState n;
    n.layer_sizes = {2, 1};
    n.weights = {(Matrix(1, 2) << 0.4, -0.3).finished()};
    n.biases = {Vector::Constant(1, 0.1)};
    TrialDataset d(Bounds::uniform(2, -1.0, 1.0));
    const PsychScaleConfig s{};
    const Vector x = (Vector(2) << 0.5, 0.2).finished(), u = (Vector(2) << -0.3, 0.8).finished();
    auto q = [&](const Vector& z) { return ref::prob_of_raw(0.4 * z[0] - 0.3 * z[1] + 0.1, s); };
    auto dq = [&](const Vector& z) { return ref::dprob_draw(0.4 * z[0] - 0.3 * z[1] + 0.1, s); };
    const double kxx = dq(x) * dq(x) * (x.squaredNorm() + 1.0) + 1e-6;
    const double kux = dq(u) * dq(x) * (u.dot(x) + 1.0);
    const double want = q(u) + kux / kxx * (1.0 - q(x));
    EXPECT_NEAR(ntk_lookahead_predict(n, d, x, 1, {u}, s)[0], want, 1e-12);
}

TEST(Lookahead, InterpolatesWellConditionedPoints) {
    const NetworkState net = init_network(2, 5);
    TrialDataset d(Bounds::uniform(2, -20.0, 20.0));
    const double pts[3][2] = {{-15.0, -12.0}, {14.0, -3.0}, {-2.0, 16.0}};
    for (int i = 0; i < 3; ++i) d.records.push_back({(Vector(2) << pts[i][0], pts[i][1]).finished(), i % 2});
    const NormStats ns = compute_norm_stats(d.records);
    d.norm_mean = ns.mean;
    d.norm_std = ns.std;
    const Vector xn = (Vector(2) << 10.0, 12.0).finished();
    std::vector<Vector> xs;
    for (const auto& r : d.records) xs.push_back(r.stimulus);
    xs.push_back(xn);

    Matrix z(2, 4);
    for (int i = 0; i < 4; ++i) z.col(i) = d.normalize(xs[static_cast<std::size_t>(i)]);
    const TangentFactors f = tangent_factors(net, z, {});
    ASSERT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(ntk_matrix(f, f)).eigenvalues().minCoeff(), 1e-2);

    for (int y : {0, 1}) {
        const Vector at = ntk_lookahead_predict(net, d, xn, y, xs, {}, 1e-6);
        for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(at[static_cast<Eigen::Index>(i)], d.records[i].response, 1e-4);
        EXPECT_NEAR(at[3], y, 1e-4);
    }
}

TEST(Lookahead, ZeroChangeWhenResidualVanishes) {
    // A network whose output is already 1 - 1e-17 at every point and labels of 1:
    // every residual is zero in floating point, so predictions are unchanged.
    NetworkState n = init_network({2, 4, 1}, 2);
    for (auto& w : n.weights) w.setZero();
    for (auto& b : n.biases) b.setZero();
    n.biases.back()[0] = 400.0;
    TrialDataset d = toy_dataset(4, 3);
    for (auto& r : d.records) r.response = 1;
    const std::vector<Vector> us = blue_noise_subsample(d.bounds, 8, 2, 3).points;
    const Vector base = forward_batch(n, [&] {
        Matrix m(2, 8);
        for (int i = 0; i < 8; ++i) m.col(i) = d.normalize(us[static_cast<std::size_t>(i)]);
        return m;
    }(), {});
    const Vector after = ntk_lookahead_predict(n, d, Vector::Zero(2), 1, us, {});
    EXPECT_EQ(after, base);
    EXPECT_EQ(lookahead_value(n, d, Vector::Zero(2), us, {}), 0.0);
}

TEST(Lookahead, SymmetricLabelsOnFlatNetwork) {
    // Zero weights, bias at the squash median: q = 1/2 everywhere and the
    // kernel is constant, so both hypothetical labels move U equally.
    NetworkState n = init_network({2, 4, 1}, 2);
    for (auto& w : n.weights) w.setZero();
    for (auto& b : n.biases) b.setZero();
    n.biases.back()[0] = 20.0 * std::log10(std::log(2.0));
    TrialDataset d(Bounds::uniform(2, -1.0, 1.0));
    const Vector x = (Vector(2) << 0.1, -0.4).finished();
    ASSERT_NEAR(forward(n, x, {}).prob, 0.5, 1e-15);
    const Matrix u = Matrix::Random(2, 9);
    LookaheadKernel k(n, Matrix(2, 0), Vector(0), u, {}, 1e-6);
    const auto ch = k.change(tangent(n, x, {}));
    EXPECT_NEAR(ch[0], ch[1], 1e-15);
    EXPECT_GT(ch[0], 0.0);
}

TEST(Lookahead, CachedKernelMatchesDirectSolve) {
    const NetworkState net = init_network({2, 16, 8, 1}, 6);
    const PsychScaleConfig s{0.5, 0.0};
    for (int n : {0, 1, 7}) {
        TrialDataset d = toy_dataset(std::max(n, 1), 10 + static_cast<std::uint64_t>(n));
        if (n == 0) d.records.clear();
        const std::vector<Vector> us = blue_noise_subsample(d.bounds, 16, 2, 4).points;
        Matrix um(2, 16);
        for (int i = 0; i < 16; ++i) um.col(i) = d.normalize(us[static_cast<std::size_t>(i)]);
        const LookaheadKernel k(net, d.normalized_stimuli(), d.labels(), um, s, 1e-6);
        for (int c = 0; c < 5; ++c) {
            const Vector x = sobol_point(static_cast<std::uint64_t>(c + 3), 2, d.bounds);
            const double cached = k.value(tangent(net, d.normalize(x), s));
            const double direct = lookahead_value(net, d, x, us, s, 1e-6);
            EXPECT_NEAR(cached, direct, 1e-6 * std::max(direct, 1e-8)) << n << " " << c;
        }
    }
}

TEST(SelectNext, ComponentsNormalizedOverCandidates) {
    const NetworkState net = init_network({2, 16, 8, 1}, 7);
    const TrialDataset d = toy_dataset(8, 4);
    const AcquisitionConfig cfg = small_config();
    AcquisitionContext ctx(net, d, {}, cfg, 99);
    const auto cands = candidate_points(d.bounds, cfg.candidate_count, 99);
    std::vector<RawComponents> raws;
    for (const auto& c : cands) raws.push_back(ctx.raw(c));
    ctx.set_normalizers(max_raw(raws));
    double gmax = 0, umax = 0, lmax = 0, pmin = 1;
    for (const auto& r : raws) {
        const Components c = ctx.normalize(r);
        for (double v : c.as_array()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        gmax = std::max(gmax, c.grad);
        umax = std::max(umax, c.unc);
        lmax = std::max(lmax, c.la);
        pmin = std::min(pmin, c.prox);
    }
    EXPECT_EQ(gmax, 1.0);
    EXPECT_EQ(umax, 1.0);
    EXPECT_EQ(lmax, 1.0);
    EXPECT_EQ(pmin, 0.0);
}

TEST(SelectNext, RefinementNeverLosesToSweep) {
    const NetworkState net = init_network({2, 16, 8, 1}, 8);
    const TrialDataset d = toy_dataset(10, 5);
    const AcquisitionConfig cfg = small_config();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const SelectionRequest req{5, 4, seed};
        const Selection sel = select_next(net, d, cfg, d.bounds, {}, req);
        ASSERT_FALSE(sel.random_exploration);
        ASSERT_TRUE(sel.diagnostics.has_value());
        EXPECT_TRUE(d.bounds.contains(sel.x));
        EXPECT_EQ(sel.next_sobol_index, 4u);

        AcquisitionContext ctx(net, d, {}, cfg, seed);
        const auto cands = candidate_points(d.bounds, cfg.candidate_count, seed);
        std::vector<RawComponents> raws;
        for (const auto& c : cands) raws.push_back(ctx.raw(c));
        ctx.set_normalizers(max_raw(raws));
        double best = 0.0;
        for (const auto& r : raws) best = std::max(best, combine(ctx.normalize(r), ctx.weights()));
        EXPECT_GE(sel.diagnostics->combined, best - 1e-9);
        EXPECT_NEAR(ctx.score(sel.x).combined, sel.diagnostics->combined, 1e-12);

        const Selection again = select_next(net, d, cfg, d.bounds, {}, req);
        EXPECT_EQ(again.x, sel.x);
    }
}

TEST(SelectNext, ExplorationReturnsSobol) {
    const NetworkState net = init_network({2, 16, 8, 1}, 9);
    const TrialDataset d = toy_dataset(3, 6);
    AcquisitionConfig cfg = small_config();
    cfg.exploration = {1.0, 1.0, 1.0};
    const Selection s = select_next(net, d, cfg, d.bounds, {}, {3, 7, 1});
    EXPECT_TRUE(s.random_exploration);
    EXPECT_EQ(s.x, sobol_point(7, 2, d.bounds));
    EXPECT_EQ(s.next_sobol_index, 8u);

    cfg = small_config();
    cfg.enabled = ComponentSet::none();
    std::uint64_t idx = 1;
    for (int t = 1; t <= 10; ++t) {
        const Selection r = select_next(net, d, cfg, d.bounds, {}, {t, idx, static_cast<std::uint64_t>(t)});
        EXPECT_EQ(r.x, sobol_point(idx, 2, d.bounds));
        idx = r.next_sobol_index;
    }
    EXPECT_EQ(idx, 11u);
}

TEST(SelectNext, RejectsDegenerateBounds) {
    const NetworkState net = init_network({2, 4, 1}, 1);
    TrialDataset d = toy_dataset(3, 1);
    Bounds b = d.bounds;
    b.high[1] = b.low[1];
    try {
        select_next(net, d, small_config(), b, {}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidBounds);
    }
}

TEST(MaximizeInBox, ClimbsConcaveBowl) {
    auto f = [](const Vector& u) { return -(u.array() - 0.3).square().sum(); };
    Vector u = Vector::Constant(3, 0.9);
    double fu = f(u);
    const Vector out = maximize_in_box(f, u, fu, 30, 1e-6);
    EXPECT_LT((out.array() - 0.3).abs().maxCoeff(), 1e-3);
    EXPECT_NEAR(fu, f(out), 0.0);
    auto edge = [](const Vector& u) { return u.sum(); };
    Vector v = Vector::Constant(2, 0.5);
    double fv = edge(v);
    EXPECT_EQ(maximize_in_box(edge, v, fv, 30, 1e-6), Vector::Ones(2));
}

TEST(ComponentSet, Parse) {
    EXPECT_EQ(ComponentSet::parse("grad,la").to_string(), "grad,la");
    EXPECT_FALSE(ComponentSet::parse("random").any());
    EXPECT_THROW(ComponentSet::parse("grad,foo"), Error);
}
