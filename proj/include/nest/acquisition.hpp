#pragma once

// Four-component acquisition function and next-stimulus selection.

#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nest/bounds.hpp"
#include "nest/errors.hpp"
#include "nest/net.hpp"
#include "nest/rng.hpp"
#include "nest/sampling.hpp"

namespace nest {

/// Exponents of the weighted geometric mean (gradient, proximity,
/// uncertainty, lookahead).
struct AcquisitionWeights {
    double a = 0.8;
    double b = 10.6;
    double c = 6.0;
    double d = 4.0;

    std::array<double, 4> as_array() const { return {a, b, c, d}; }
    double sum() const { return a + b + c + d; }

    void validate() const {
        for (double w : as_array())
            if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Config, "acquisition weights must be finite and >= 0");
        if (!(sum() > 0.0)) fail(ErrorKind::Config, "acquisition weights must not all be zero");
    }
};

/// Which components take part; a disabled component behaves like weight 0.
struct ComponentSet {
    bool grad = true;
    bool prox = true;
    bool unc = true;
    bool la = true;

    bool any() const { return grad || prox || unc || la; }
    static ComponentSet none() { return {false, false, false, false}; }

    /// Comma-separated subset of grad,prox,unc,la; "none" or "random" for the
    /// pure-Sobol sampler.
    static ComponentSet parse(const std::string& text) {
        ComponentSet s = none();
        if (text == "none" || text == "random") return s;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const std::size_t comma = std::min(text.find(',', pos), text.size());
            const std::string tok = text.substr(pos, comma - pos);
            if (tok == "grad") s.grad = true;
            else if (tok == "prox") s.prox = true;
            else if (tok == "unc") s.unc = true;
            else if (tok == "la") s.la = true;
            else if (!tok.empty()) fail(ErrorKind::Config, "unknown acquisition component '" + tok + "'");
            pos = comma + 1;
        }
        return s;
    }

    std::string to_string() const {
        std::string out;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!out.empty()) out += ',';
            out += name;
        };
        add(grad, "grad");
        add(prox, "prox");
        add(unc, "unc");
        add(la, "la");
        return out.empty() ? "none" : out;
    }

    bool operator==(const ComponentSet&) const = default;
};

struct ExplorationSchedule {
    double p0 = 0.5;
    double f = 0.97;
    double p_base = 0.05;

    void validate() const {
        if (!(p0 >= 0.0 && p0 <= 1.0) || !(p_base >= 0.0 && p_base <= 1.0) || !(f > 0.0 && f <= 1.0))
            fail(ErrorKind::Config, "exploration schedule needs p0, p_base in [0,1] and f in (0,1]");
    }
};

struct AcquisitionConfig {
    AcquisitionWeights weights;
    double parzen_h = 0.25;
    int mc_samples = 100;
    int lookahead_subsample = 128;
    double ntk_jitter = 1e-6;
    int candidate_count = 512;
    int restarts = 16;
    ExplorationSchedule exploration;
    ComponentSet enabled;
    int refine_iterations = 12;
    double fd_step = 1e-6;
    double dropout_p = 0.1;

    /// Weights after the ablation mask is applied.
    AcquisitionWeights effective_weights() const {
        return {enabled.grad ? weights.a : 0.0, enabled.prox ? weights.b : 0.0, enabled.unc ? weights.c : 0.0,
                enabled.la ? weights.d : 0.0};
    }

    /// True when no component carries weight, i.e. the sampler is pure Sobol.
    bool pure_random() const { return !(effective_weights().sum() > 0.0); }

    void validate() const {
        for (double w : weights.as_array())
            if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Config, "acquisition weights must be finite and >= 0");
        if (enabled.any() && !(effective_weights().sum() > 0.0))
            fail(ErrorKind::Config, "enabled acquisition components all have zero weight");
        if (!(parzen_h > 0.0)) fail(ErrorKind::Config, "parzen_h must be > 0");
        if (mc_samples < 2) fail(ErrorKind::Config, "mc_samples must be >= 2");
        if (lookahead_subsample < 1) fail(ErrorKind::Config, "lookahead_subsample must be >= 1");
        if (!(ntk_jitter > 0.0)) fail(ErrorKind::Config, "ntk_jitter must be > 0");
        if (restarts < 1 || candidate_count < restarts) fail(ErrorKind::Config, "need candidate_count >= restarts >= 1");
        if (refine_iterations < 0) fail(ErrorKind::Config, "refine_iterations must be >= 0");
        if (!(fd_step > 0.0 && fd_step < 0.5)) fail(ErrorKind::Config, "fd_step must lie in (0, 0.5)");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail(ErrorKind::Config, "dropout_p must lie in [0, 1)");
        exploration.validate();
    }
};

/// Normalized component values, each in [0,1].
struct Components {
    double grad = 1.0;
    double prox = 1.0;
    double unc = 1.0;
    double la = 1.0;

    std::array<double, 4> as_array() const { return {grad, prox, unc, la}; }
};

/// Raw (unnormalized) quantities behind each component.
struct RawComponents {
    double grad_norm = 0.0;
    double density = 0.0;
    double std = 0.0;
    double lookahead = 0.0;
};

struct CandidateScore {
    Vector x;
    Components components;
    double combined = 0.0;
};

inline constexpr double kDegenerateNormalizer = 1e-12;

// ---------------------------------------------------------------------------
// Components

/// Gaussian Parzen density of x among the columns of X (normalized coordinates).
inline double prox_density(const Vector& x, const Matrix& X, double h) {
    if (X.cols() == 0) fail(ErrorKind::EmptyDataset, "proximity density needs a nonempty history");
    if (X.rows() != x.size()) fail(ErrorKind::Shape, "history and point differ in dimension");
    const double k = static_cast<double>(x.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) acc += std::exp(-(X.col(i) - x).squaredNorm() / (2.0 * h * h));
    const double norm = static_cast<double>(X.cols()) * std::pow(h, k) * std::pow(2.0 * std::numbers::pi, k / 2.0);
    return acc / norm;
}

inline double prox_density(const Vector& x, const std::vector<Vector>& X, double h) {
    Matrix m(x.size(), static_cast<Eigen::Index>(X.size()));
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i].size() != x.size()) fail(ErrorKind::Shape, "history and point differ in dimension");
        m.col(static_cast<Eigen::Index>(i)) = X[i];
    }
    return prox_density(x, m, h);
}

/// value / normalizer clamped to [0,1]; 1 when the normalizer is degenerate.
inline double ratio_component(double value, double normalizer) {
    if (!(normalizer >= kDegenerateNormalizer)) return 1.0;
    return std::clamp(value / normalizer, 0.0, 1.0);
}

inline double prox_component(double density, double normalizer) {
    if (!(normalizer >= kDegenerateNormalizer)) return 1.0;
    return std::clamp(1.0 - density / normalizer, 0.0, 1.0);
}

inline double prox_component(const Vector& x, const Matrix& X, double h, double normalizer) {
    return prox_component(prox_density(x, X, h), normalizer);
}

/// ||d q / d x|| / normalizer for a normalized input x.
inline double grad_component(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale, double normalizer) {
    return ratio_component(input_gradient(net, x, scale).norm(), normalizer);
}

inline double unc_component(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale, int samples,
                            std::uint64_t seed, double normalizer, double dropout_p = 0.1) {
    return ratio_component(std::sqrt(mc_dropout_stats(net, x, scale, samples, seed, dropout_p).variance), normalizer);
}

/// Weighted geometric mean; zero-weight components are inert (0^0 = 1).
inline double combine(const Components& p, const AcquisitionWeights& w) {
    const auto pv = p.as_array();
    const auto wv = w.as_array();
    double total = 0.0, log_acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!(wv[i] > 0.0)) continue;
        if (!(pv[i] > 0.0)) return 0.0;
        total += wv[i];
        log_acc += wv[i] * std::log(std::min(pv[i], 1.0));
    }
    if (!(total > 0.0)) return 1.0;
    return std::exp(log_acc / total);
}

inline double exploration_probability(int t, const ExplorationSchedule& s) {
    if (t < 1) fail(ErrorKind::InvalidArgument, "trial index starts at 1");
    return std::max(s.p_base, s.p0 * std::pow(s.f, t - 1));
}

// ---------------------------------------------------------------------------
// NTK lookahead

/// Cholesky factor of G + jitter I, escalating the jitter by 10x up to three
/// times. `used` receives the jitter that succeeded.
inline Matrix jittered_cholesky(const Matrix& gram, double jitter, double& used) {
    const Eigen::Index n = gram.rows();
    double j = jitter;
    for (int attempt = 0; attempt <= 3; ++attempt, j *= 10.0) {
        Matrix a = gram;
        a.diagonal().array() += j;
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success) continue;
        Matrix l = llt.matrixL();
        bool ok = true;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) ok = false;
        if (!ok) continue;
        used = j;
        return l;
    }
    fail(ErrorKind::SingularKernel, "NTK Gram matrix is not positive definite after jitter escalation");
}

/// Per-layer factors of a point set: D_l (width x N) and H_l (fan-in x N).
struct TangentFactors {
    std::vector<Matrix> delta;
    std::vector<Matrix> input;
    Vector prob;

    Eigen::Index size() const { return prob.size(); }
};

inline TangentFactors tangent_factors(const NetworkState& net, const Matrix& points, const PsychScaleConfig& scale) {
    TangentFactors f;
    const std::size_t layers = net.layer_count();
    const Eigen::Index n = points.cols();
    f.delta.resize(layers);
    f.input.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        f.delta[l].resize(net.layer_sizes[l + 1], n);
        f.input[l].resize(net.layer_sizes[l], n);
    }
    f.prob.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Tangent t = tangent(net, points.col(i), scale);
        for (std::size_t l = 0; l < layers; ++l) {
            f.delta[l].col(i) = t.delta[l];
            f.input[l].col(i) = t.inputs[l];
        }
        f.prob[i] = t.prob;
    }
    return f;
}

/// Theta(A, B) as an |A| x |B| matrix.
inline Matrix ntk_matrix(const TangentFactors& a, const TangentFactors& b) {
    Matrix out = Matrix::Zero(a.size(), b.size());
    for (std::size_t l = 0; l < a.delta.size(); ++l) {
        Matrix h = a.input[l].transpose() * b.input[l];
        h.array() += 1.0;
        out.array() += (a.delta[l].transpose() * b.delta[l]).array() * h.array();
    }
    return out;
}

/// Theta(t, B) as a |B|-vector.
inline Vector ntk_row(const Tangent& t, const TangentFactors& b) {
    Vector out = Vector::Zero(b.size());
    for (std::size_t l = 0; l < b.delta.size(); ++l)
        out.array() += (b.delta[l].transpose() * t.delta[l]).array() * ((b.input[l].transpose() * t.inputs[l]).array() + 1.0);
    return out;
}

/// Linearized prediction after adding (x_new, y_new) to the dataset. Points are
/// in native units; the dataset's normalization maps them to network inputs.
inline Vector ntk_lookahead_predict(const NetworkState& net, const TrialDataset& data, const Vector& x_new, int y_new,
                                    const std::vector<Vector>& eval_points, const PsychScaleConfig& scale,
                                    double jitter = 1e-6) {
    if (!(jitter > 0.0)) fail(ErrorKind::InvalidArgument, "jitter must be > 0");
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    Matrix xs(data.dim(), n + 1);
    Vector y(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        xs.col(i) = data.normalize(data.records[static_cast<std::size_t>(i)].stimulus);
        y[i] = data.records[static_cast<std::size_t>(i)].response;
    }
    xs.col(n) = data.normalize(x_new);
    y[n] = y_new;
    Matrix us(data.dim(), static_cast<Eigen::Index>(eval_points.size()));
    for (std::size_t i = 0; i < eval_points.size(); ++i) us.col(static_cast<Eigen::Index>(i)) = data.normalize(eval_points[i]);

    const TangentFactors fx = tangent_factors(net, xs, scale);
    const TangentFactors fu = tangent_factors(net, us, scale);
    double used = jitter;
    const Matrix l = jittered_cholesky(ntk_matrix(fx, fx), jitter, used);
    Vector coef = l.triangularView<Eigen::Lower>().solve(Vector(y - fx.prob));
    coef = l.transpose().triangularView<Eigen::Upper>().solve(coef);
    return fu.prob + ntk_matrix(fu, fx) * coef;
}

/// Per-trial cache for the lookahead term. The Gram factor of the current
/// dataset is built once; each candidate borders it by one row.
class LookaheadKernel {
public:
    LookaheadKernel() = default;

    LookaheadKernel(const NetworkState& net, const Matrix& x_norm, const Vector& labels, const Matrix& u_norm,
                    const PsychScaleConfig& scale, double jitter)
        : jitter_(jitter) {
        fx_ = tangent_factors(net, x_norm, scale);
        fu_ = tangent_factors(net, u_norm, scale);
        const Eigen::Index n = fx_.size();
        const Eigen::Index m = fu_.size();
        if (n > 0) {
            l_ = jittered_cholesky(ntk_matrix(fx_, fx_), jitter, jitter_);
            b0t_ = l_.triangularView<Eigen::Lower>().solve(ntk_matrix(fx_, fu_));
            s0_ = l_.triangularView<Eigen::Lower>().solve(Vector(labels - fx_.prob));
            v0_ = b0t_.transpose() * s0_;
        } else {
            v0_ = Vector::Zero(m);
        }
    }

    double jitter() const { return jitter_; }
    Eigen::Index eval_count() const { return fu_.size(); }

    /// Squared output change summed over U for both hypothetical labels.
    std::array<double, 2> change(const Tangent& t) const {
        const Vector ku = ntk_row(t, fu_);
        double c = ntk(t, t) + jitter_;
        Vector l;
        Vector b;
        double ls0 = 0.0;
        if (fx_.size() > 0) {
            l = l_.triangularView<Eigen::Lower>().solve(ntk_row(t, fx_));
            c -= l.squaredNorm();
            ls0 = l.dot(s0_);
        }
        for (int k = 1; !(c > 0.0) && k <= 3; ++k) c += jitter_ * (std::pow(10.0, k) - std::pow(10.0, k - 1));
        if (!(c > 0.0)) fail(ErrorKind::SingularKernel, "bordered NTK factor lost positive definiteness");
        const double d = std::sqrt(c);
        b = fx_.size() > 0 ? Vector((ku - b0t_.transpose() * l) / d) : Vector(ku / d);
        const double v0b = v0_.dot(b), bb = b.squaredNorm(), v0v0 = v0_.squaredNorm();
        std::array<double, 2> out{};
        for (int y = 0; y < 2; ++y) {
            const double s = (y - t.prob - ls0) / d;
            out[static_cast<std::size_t>(y)] = v0v0 + 2.0 * s * v0b + s * s * bb;
        }
        return out;
    }

    /// f_la = min over labels of the mean squared change.
    double value(const Tangent& t) const {
        const auto s = change(t);
        return std::max(0.0, std::min(s[0], s[1])) / static_cast<double>(std::max<Eigen::Index>(1, fu_.size()));
    }

private:
    double jitter_ = 1e-6;
    TangentFactors fx_;
    TangentFactors fu_;
    Matrix l_;
    Matrix b0t_;  // L^-1 Theta(X, U)
    Vector s0_;   // L^-1 (y - q(X))
    Vector v0_;   // change on U from refitting the current residuals
};

/// Raw lookahead value for candidate x (native units) without per-trial caching.
inline double lookahead_value(const NetworkState& net, const TrialDataset& data, const Vector& x,
                              const std::vector<Vector>& eval_points, const PsychScaleConfig& scale, double jitter = 1e-6) {
    if (eval_points.empty()) fail(ErrorKind::InvalidArgument, "lookahead needs at least one evaluation point");
    Matrix us(data.dim(), static_cast<Eigen::Index>(eval_points.size()));
    for (std::size_t i = 0; i < eval_points.size(); ++i) us.col(static_cast<Eigen::Index>(i)) = data.normalize(eval_points[i]);
    const Vector base = forward_batch(net, us, scale);
    double best = std::numeric_limits<double>::infinity();
    for (int y = 0; y < 2; ++y)
        best = std::min(best, (ntk_lookahead_predict(net, data, x, y, eval_points, scale, jitter) - base).squaredNorm());
    return best / static_cast<double>(eval_points.size());
}

inline double lookahead_component(const NetworkState& net, const TrialDataset& data, const Vector& x,
                                  const std::vector<Vector>& eval_points, const PsychScaleConfig& scale, double normalizer,
                                  double jitter = 1e-6) {
    return ratio_component(lookahead_value(net, data, x, eval_points, scale, jitter), normalizer);
}

// ---------------------------------------------------------------------------
// Per-trial scoring context

/// Everything the acquisition needs for one trial, built once and then read
/// only. Points passed to raw()/score() are in native units.
class AcquisitionContext {
public:
    AcquisitionContext(const NetworkState& net, const TrialDataset& data, const PsychScaleConfig& scale,
                       const AcquisitionConfig& cfg, std::uint64_t trial_seed, bool compute_all = false)
        : net_(&net), data_(&data), scale_(scale), cfg_(cfg), weights_(cfg.effective_weights()) {
        want_ = {compute_all || weights_.a > 0.0, compute_all || weights_.b > 0.0, compute_all || weights_.c > 0.0,
                 compute_all || weights_.d > 0.0};
        history_ = data.normalized_stimuli();
        if (want_.unc) {
            const int width = net.layer_sizes[net.layer_sizes.size() - 2];
            masks_ = sample_last_layer_masks(width, cfg.mc_samples, cfg.dropout_p, derive_seed(trial_seed, {0x3c}));
        }
        if (want_.la) {
            eval_points_ = blue_noise_subsample(data.bounds, cfg.lookahead_subsample, data.dim(), derive_seed(trial_seed, {0x1a})).points;
            Matrix us(data.dim(), static_cast<Eigen::Index>(eval_points_.size()));
            for (std::size_t i = 0; i < eval_points_.size(); ++i) us.col(static_cast<Eigen::Index>(i)) = data.normalize(eval_points_[i]);
            kernel_ = LookaheadKernel(net, history_, data.labels(), us, scale, cfg.ntk_jitter);
        }
    }

    const AcquisitionWeights& weights() const { return weights_; }
    const std::vector<Vector>& eval_points() const { return eval_points_; }
    const RawComponents& normalizers() const { return norm_; }
    void set_normalizers(const RawComponents& n) { norm_ = n; }

    RawComponents raw(const Vector& x) const {
        RawComponents r;
        const Vector z = data_->normalize(x);
        const Tangent t = tangent_from_trace(*net_, forward_trace(*net_, z, scale_));
        if (want_.grad) r.grad_norm = input_gradient_from_tangent(*net_, t).norm();
        if (want_.prox && history_.cols() > 0) r.density = prox_density(z, history_, cfg_.parzen_h);
        if (want_.unc) r.std = std::sqrt(mc_dropout_from_hidden(*net_, t.inputs.back(), scale_, masks_).variance);
        if (want_.la) r.lookahead = kernel_.value(t);
        return r;
    }

    Components normalize(const RawComponents& r) const {
        Components c;
        c.grad = ratio_component(r.grad_norm, norm_.grad_norm);
        c.prox = prox_component(r.density, norm_.density);
        c.unc = ratio_component(r.std, norm_.std);
        c.la = ratio_component(r.lookahead, norm_.lookahead);
        return c;
    }

    CandidateScore score(const Vector& x) const {
        CandidateScore s;
        s.x = x;
        s.components = normalize(raw(x));
        s.combined = combine(s.components, weights_);
        return s;
    }

private:
    struct Wanted {
        bool grad, prox, unc, la;
    };
    const NetworkState* net_;
    const TrialDataset* data_;
    PsychScaleConfig scale_;
    AcquisitionConfig cfg_;
    AcquisitionWeights weights_;
    Wanted want_{};
    Matrix history_;
    Matrix masks_;
    std::vector<Vector> eval_points_;
    LookaheadKernel kernel_;
    RawComponents norm_;
};

/// Component-wise maximum of raw values, used as per-trial normalizers.
inline RawComponents max_raw(const std::vector<RawComponents>& raws) {
    RawComponents m;
    for (const RawComponents& r : raws) {
        m.grad_norm = std::max(m.grad_norm, r.grad_norm);
        m.density = std::max(m.density, r.density);
        m.std = std::max(m.std, r.std);
        m.lookahead = std::max(m.lookahead, r.lookahead);
    }
    return m;
}

/// Shifted Sobol candidate set for one trial, in native units.
inline std::vector<Vector> candidate_points(const Bounds& bounds, int count, std::uint64_t trial_seed) {
    SplitMix64 gen(derive_seed(trial_seed, {0xca4d}));
    Vector shift(bounds.dim());
    for (int d = 0; d < bounds.dim(); ++d) shift[d] = gen.uniform();
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(bounds.from_unit(shifted_sobol_unit(static_cast<std::uint64_t>(i), shift)));
    return out;
}

/// Bounded quasi-Newton ascent on the unit cube with forward-difference
/// gradients. Only improving steps are accepted.
inline Vector maximize_in_box(const std::function<double(const Vector&)>& f, Vector u, double& fu, int iterations, double step) {
    const Eigen::Index k = u.size();
    auto gradient = [&](const Vector& at, double f_at) {
        Vector g(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            Vector p = at;
            const double h = at[i] + step <= 1.0 ? step : -step;
            p[i] += h;
            g[i] = (f(p) - f_at) / h;
        }
        return g;
    };
    if (!std::isfinite(fu)) return u;
    Vector g = gradient(u, fu);
    Matrix hinv = Matrix::Identity(k, k);
    bool scaled = false;
    for (int it = 0; it < iterations; ++it) {
        if (!g.allFinite()) break;
        Vector free_g = g;
        for (Eigen::Index i = 0; i < k; ++i)
            if ((u[i] <= 0.0 && g[i] < 0.0) || (u[i] >= 1.0 && g[i] > 0.0)) free_g[i] = 0.0;
        if (free_g.norm() < 1e-10) break;
        Vector p = hinv * free_g;
        for (Eigen::Index i = 0; i < k; ++i)
            if (free_g[i] == 0.0) p[i] = 0.0;
        if (!(p.dot(free_g) > 0.0)) {
            p = free_g;
            hinv.setIdentity();
            scaled = false;
        }
        const double longest = p.cwiseAbs().maxCoeff();
        if (longest > 0.25) p *= 0.25 / longest;

        double t = 1.0;
        bool accepted = false;
        Vector u_new;
        double f_new = 0.0;
        for (int ls = 0; ls < 12; ++ls, t *= 0.5) {
            u_new = (u + t * p).cwiseMax(0.0).cwiseMin(1.0);
            f_new = f(u_new);
            if (std::isfinite(f_new) && f_new > fu + 1e-4 * g.dot(u_new - u)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const Vector g_new = gradient(u_new, f_new);
        const Vector s = u_new - u;
        const Vector y = g - g_new;  // gradient change of the minimized -f
        const double sy = s.dot(y);
        if (sy > 1e-12) {
            if (!scaled) {
                hinv *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Matrix id = Matrix::Identity(k, k);
            hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
        }
        u = u_new;
        fu = f_new;
        g = g_new;
    }
    return u;
}

struct SelectionRequest {
    int trial = 1;                  // 1-based index of the trial being queried
    std::uint64_t sobol_index = 1;  // next unused exploration point
    std::uint64_t seed = 0;         // per-trial seed
};

struct Selection {
    Vector x;
    bool random_exploration = false;
    std::uint64_t next_sobol_index = 1;
    std::optional<CandidateScore> diagnostics;
};

inline Selection select_next(const NetworkState& net, const TrialDataset& data, const AcquisitionConfig& cfg,
                             const Bounds& bounds, const PsychScaleConfig& scale, const SelectionRequest& req) {
    bounds.validate();
    cfg.validate();
    if (bounds.dim() != data.dim() || bounds.dim() != net.input_dim()) fail(ErrorKind::Shape, "bounds, dataset and network differ in dimension");
    Selection out;
    out.next_sobol_index = req.sobol_index;

    SplitMix64 coin(derive_seed(req.seed, {0xe8b1}));
    if (cfg.pure_random() || coin.uniform() < exploration_probability(req.trial, cfg.exploration)) {
        out.x = sobol_point(req.sobol_index, bounds.dim(), bounds);
        out.random_exploration = true;
        out.next_sobol_index = req.sobol_index + 1;
        return out;
    }

    AcquisitionContext ctx(net, data, scale, cfg, req.seed);
    const std::vector<Vector> cands = candidate_points(bounds, cfg.candidate_count, req.seed);
    std::vector<RawComponents> raws;
    raws.reserve(cands.size());
    for (const Vector& c : cands) raws.push_back(ctx.raw(c));
    ctx.set_normalizers(max_raw(raws));

    std::vector<CandidateScore> scores(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        scores[i].x = cands[i];
        scores[i].components = ctx.normalize(raws[i]);
        scores[i].combined = combine(scores[i].components, ctx.weights());
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].combined > scores[b].combined; });

    CandidateScore best = scores[order.front()];
    auto objective = [&](const Vector& u) {
        const double v = ctx.score(bounds.from_unit(u)).combined;
        return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
    };
    const std::size_t starts = std::min<std::size_t>(static_cast<std::size_t>(cfg.restarts), order.size());
    for (std::size_t r = 0; r < starts; ++r) {
        const CandidateScore& s0 = scores[order[r]];
        if (!(s0.combined > 0.0)) break;
        double fu = std::log(s0.combined);
        const Vector u = maximize_in_box(objective, bounds.to_unit(s0.x), fu, cfg.refine_iterations, cfg.fd_step);
        CandidateScore refined = ctx.score(bounds.clamp(bounds.from_unit(u)));
        if (refined.combined > best.combined) best = std::move(refined);
    }
    best.x = bounds.clamp(best.x);
    out.x = best.x;
    out.diagnostics = std::move(best);
    return out;
}

}  // namespace nest
