#pragma once

// Feedforward psychometric estimator: ReLU MLP with a Weibull output squash
// followed by the lower-asymptote / lapse affine scaling.
//
// Flat parameter order (used by param_gradient, flatten and the snapshot
// format) is layer-major; within a layer the weight matrix comes first in
// row-major order (output unit major), then the bias vector.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nest/bounds.hpp"
#include "nest/errors.hpp"
#include "nest/rng.hpp"

namespace nest {

inline constexpr double kLn10Over20 = std::numbers::ln10 / 20.0;

struct PsychScaleConfig {
    double alpha = 0.0;        // lower asymptote
    double gamma_lapse = 0.0;  // lapse rate
    double rho = 1.0;          // Weibull slope of the output squash
    double t_thresh = 0.0;     // Weibull threshold of the output squash

    void validate() const {
        if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorKind::Config, "alpha must lie in [0, 1)");
        if (!(gamma_lapse >= 0.0 && gamma_lapse < 1.0)) fail(ErrorKind::Config, "gamma_lapse must lie in [0, 1)");
        if (!(alpha + gamma_lapse < 1.0)) fail(ErrorKind::Config, "alpha + gamma_lapse must be < 1");
        if (!(rho > 0.0) || !std::isfinite(rho)) fail(ErrorKind::Config, "rho must be positive");
        if (!std::isfinite(t_thresh)) fail(ErrorKind::Config, "t_thresh must be finite");
    }
};

struct TrainConfig {
    double eta0 = 3.0e-4;
    int epochs_per_trial = 100;
    double final_lr_fraction = 0.01;  // g^epochs == final_lr_fraction
    double shrink_lambda = 0.9;
    double perturb_sigma = 0.01;
    double dropout_p = 0.1;
    double input_noise_sigma = 0.01;
    double log_clamp = 100.0;
    int normalization_freeze_trial = 25;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 16;  // records per Adam step; 0 means the full dataset

    double decay_rate() const { return std::pow(final_lr_fraction, 1.0 / epochs_per_trial); }
    double learning_rate(int epoch) const { return eta0 * std::pow(decay_rate(), epoch); }

    void validate() const {
        if (!(eta0 > 0.0)) fail(ErrorKind::Config, "eta0 must be positive");
        if (epochs_per_trial < 1) fail(ErrorKind::Config, "epochs_per_trial must be >= 1");
        if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
            fail(ErrorKind::Config, "final_lr_fraction must lie in (0, 1]");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail(ErrorKind::Config, "dropout_p must lie in [0, 1)");
        if (!(shrink_lambda > 0.0 && shrink_lambda <= 1.0)) fail(ErrorKind::Config, "shrink_lambda must lie in (0, 1]");
        if (!(perturb_sigma >= 0.0)) fail(ErrorKind::Config, "perturb_sigma must be >= 0");
        if (!(input_noise_sigma >= 0.0)) fail(ErrorKind::Config, "input_noise_sigma must be >= 0");
        if (!(log_clamp > 0.0)) fail(ErrorKind::Config, "log_clamp must be positive");
        if (normalization_freeze_trial < 1) fail(ErrorKind::Config, "normalization_freeze_trial must be >= 1");
        if (batch_size < 0) fail(ErrorKind::Config, "batch_size must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Dataset and normalization

struct TrialRecord {
    Vector stimulus;  // native units
    int response = 0;
};

struct NormStats {
    Vector mean;
    Vector std;
};

inline constexpr double kStdFloor = 1e-8;

struct TrialDataset {
    std::vector<TrialRecord> records;
    Vector norm_mean;
    Vector norm_std;
    Bounds bounds;

    TrialDataset() = default;
    explicit TrialDataset(Bounds b) : bounds(std::move(b)) {
        norm_mean = Vector::Zero(bounds.dim());
        norm_std = Vector::Ones(bounds.dim());
    }

    int dim() const { return bounds.dim(); }
    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    Vector normalize(const Vector& x) const { return (x - norm_mean).cwiseQuotient(norm_std); }
    Vector denormalize(const Vector& z) const { return norm_mean + z.cwiseProduct(norm_std); }

    /// K x N matrix of normalized stimuli.
    Matrix normalized_stimuli() const {
        Matrix out(dim(), static_cast<Eigen::Index>(records.size()));
        for (std::size_t i = 0; i < records.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = normalize(records[i].stimulus);
        return out;
    }

    Vector labels() const {
        Vector y(static_cast<Eigen::Index>(records.size()));
        for (std::size_t i = 0; i < records.size(); ++i) y[static_cast<Eigen::Index>(i)] = records[i].response;
        return y;
    }
};

/// Per-dimension mean and population standard deviation (floored) of the records.
inline NormStats compute_norm_stats(const std::vector<TrialRecord>& records) {
    if (records.empty()) fail(ErrorKind::EmptyDataset, "cannot normalize an empty dataset");
    const Eigen::Index k = records.front().stimulus.size();
    Vector mean = Vector::Zero(k);
    for (const auto& r : records) mean += r.stimulus;
    mean /= static_cast<double>(records.size());
    Vector var = Vector::Zero(k);
    for (const auto& r : records) var += (r.stimulus - mean).cwiseAbs2();
    var /= static_cast<double>(records.size());
    Vector sd = var.cwiseSqrt().cwiseMax(kStdFloor);
    return {mean, sd};
}

/// Statistics are refit while trial_index <= freeze_at; afterwards the stored
/// (frozen) statistics are returned unchanged.
inline NormStats fit_normalization(const TrialDataset& dataset, int trial_index, int freeze_at) {
    if (dataset.empty()) fail(ErrorKind::EmptyDataset, "cannot normalize an empty dataset");
    if (trial_index <= freeze_at) return compute_norm_stats(dataset.records);
    return {dataset.norm_mean, dataset.norm_std};
}

// ---------------------------------------------------------------------------
// Network state

struct NetworkState {
    std::vector<int> layer_sizes;   // input dim, hidden widths..., 1
    std::vector<Matrix> weights;    // weights[l] is layer_sizes[l+1] x layer_sizes[l]
    std::vector<Vector> biases;     // biases[l] has length layer_sizes[l+1]
    std::uint64_t rng_seed = 0;

    int input_dim() const { return layer_sizes.empty() ? 0 : layer_sizes.front(); }
    std::size_t layer_count() const { return weights.size(); }
    std::size_t hidden_count() const { return weights.empty() ? 0 : weights.size() - 1; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l)
            n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
        return n;
    }

    void validate() const {
        if (layer_sizes.size() < 2) fail(ErrorKind::Shape, "network needs at least an input and an output layer");
        if (layer_sizes.front() < 1) fail(ErrorKind::InvalidDimension, "input dimension must be >= 1");
        if (layer_sizes.back() != 1) fail(ErrorKind::Shape, "final layer width must be 1");
        if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size())
            fail(ErrorKind::Shape, "layer count mismatch");
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l])
                fail(ErrorKind::Shape, "weight matrix " + std::to_string(l) + " has the wrong shape");
            if (biases[l].size() != layer_sizes[l + 1])
                fail(ErrorKind::Shape, "bias vector " + std::to_string(l) + " has the wrong length");
            if (!weights[l].allFinite() || !biases[l].allFinite())
                fail(ErrorKind::Domain, "non-finite parameter in layer " + std::to_string(l));
        }
    }

    Vector flatten() const {
        Vector out(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (Eigen::Index i = 0; i < weights[l].rows(); ++i)
                for (Eigen::Index j = 0; j < weights[l].cols(); ++j) out[k++] = weights[l](i, j);
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) out[k++] = biases[l][i];
        }
        return out;
    }

    void unflatten(const Vector& flat) {
        if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
            fail(ErrorKind::Shape, "flat parameter vector has the wrong length");
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (Eigen::Index i = 0; i < weights[l].rows(); ++i)
                for (Eigen::Index j = 0; j < weights[l].cols(); ++j) weights[l](i, j) = flat[k++];
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) biases[l][i] = flat[k++];
        }
    }

    bool operator==(const NetworkState& other) const {
        if (layer_sizes != other.layer_sizes || rng_seed != other.rng_seed) return false;
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
        return true;
    }
};

inline const std::vector<int>& default_hidden_widths() {
    static const std::vector<int> widths{256, 128, 32};
    return widths;
}

/// He-initialized network with the given layer sizes; biases start at zero.
inline NetworkState init_network(std::vector<int> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.empty() || layer_sizes.front() < 1) fail(ErrorKind::InvalidDimension, "input dimension must be >= 1");
    NetworkState net;
    net.layer_sizes = std::move(layer_sizes);
    net.rng_seed = seed;
    SplitMix64 gen(derive_seed(seed, {0x1e17}));
    for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
        const int fan_in = net.layer_sizes[l];
        const int fan_out = net.layer_sizes[l + 1];
        const double sd = std::sqrt(2.0 / fan_in);
        Matrix w(fan_out, fan_in);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = sd * standard_normal(gen);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector::Zero(fan_out));
    }
    net.validate();
    return net;
}

/// Network with layers [dim, 256, 128, 32, 1].
inline NetworkState init_network(int dim, std::uint64_t seed) {
    if (dim < 1) fail(ErrorKind::InvalidDimension, "dimension must be >= 1, got " + std::to_string(dim));
    std::vector<int> sizes{dim};
    for (int w : default_hidden_widths()) sizes.push_back(w);
    sizes.push_back(1);
    return init_network(std::move(sizes), seed);
}

// ---------------------------------------------------------------------------
// Output squashing

/// Weibull CDF 1 - exp(-10^(rho (u - T) / 20)).
inline double weibull_squash(double u, double rho = 1.0, double t = 0.0) {
    const double z = std::exp(kLn10Over20 * rho * (u - t));
    return -std::expm1(-z);
}

/// Affine map of [0,1] onto [alpha, 1 - gamma].
inline double scale_probability(double p, const PsychScaleConfig& cfg) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Domain, "probability outside [0, 1]");
    return cfg.alpha + (1.0 - cfg.alpha - cfg.gamma_lapse) * p;
}

struct Squashed {
    double prob;        // alpha + (1 - alpha - gamma) * weibull(raw)
    double complement;  // 1 - prob, computed without cancellation
    double dprob_draw;
};

inline Squashed squash(double raw, const PsychScaleConfig& cfg) {
    const double s = kLn10Over20 * cfg.rho * (raw - cfg.t_thresh);
    const double z = std::exp(s);
    const double band = 1.0 - cfg.alpha - cfg.gamma_lapse;
    const double tail = std::exp(-z);  // 1 - weibull
    Squashed out;
    out.prob = cfg.alpha + band * (-std::expm1(-z));
    out.complement = cfg.gamma_lapse + band * tail;
    // d/draw weibull = c * z * exp(-z), written as exp(s - z) to stay finite.
    out.dprob_draw = band * kLn10Over20 * cfg.rho * std::exp(s - z);
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward for a single point

/// Per-unit multipliers applied after each hidden ReLU. Sampled masks hold
/// 0 or 1/(1-p) (inverted dropout); an all-ones mask is the identity.
struct DropoutMask {
    std::vector<Vector> hidden;
};

inline DropoutMask all_ones_mask(const NetworkState& net) {
    DropoutMask m;
    for (std::size_t l = 0; l < net.hidden_count(); ++l) m.hidden.push_back(Vector::Ones(net.layer_sizes[l + 1]));
    return m;
}

struct ForwardTrace {
    std::vector<Vector> inputs;   // inputs[l] enters layer l (inputs[0] == x)
    std::vector<Vector> preacts;  // preacts[l] = W_l inputs[l] + b_l
    double raw = 0.0;
    Squashed out{};
};

inline void check_input(const NetworkState& net, const Vector& x) {
    if (x.size() != net.input_dim())
        fail(ErrorKind::Shape, "input has dimension " + std::to_string(x.size()) + ", network expects " +
                                   std::to_string(net.input_dim()));
}

inline ForwardTrace forward_trace(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale,
                                  const DropoutMask* mask = nullptr) {
    check_input(net, x);
    const std::size_t layers = net.layer_count();
    if (mask && mask->hidden.size() != net.hidden_count()) fail(ErrorKind::Shape, "dropout mask layer count mismatch");
    ForwardTrace tr;
    tr.inputs.reserve(layers);
    tr.preacts.reserve(layers);
    tr.inputs.push_back(x);
    for (std::size_t l = 0; l < layers; ++l) {
        tr.preacts.push_back(net.weights[l] * tr.inputs[l] + net.biases[l]);
        if (l + 1 < layers) {
            Vector h = tr.preacts[l].cwiseMax(0.0);
            if (mask) {
                if (mask->hidden[l].size() != h.size()) fail(ErrorKind::Shape, "dropout mask width mismatch");
                h = h.cwiseProduct(mask->hidden[l]);
            }
            tr.inputs.push_back(std::move(h));
        }
    }
    tr.raw = tr.preacts.back()[0];
    tr.out = squash(tr.raw, scale);
    return tr;
}

struct ForwardResult {
    double raw;
    double prob;
};

inline ForwardResult forward(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale,
                             const DropoutMask* mask = nullptr) {
    const ForwardTrace tr = forward_trace(net, x, scale, mask);
    return {tr.raw, tr.out.prob};
}

/// Reverse-mode sensitivities of the scaled probability. delta[l] is
/// d prob / d preacts[l]; inputs[l] is the activation entering layer l. The
/// parameter gradient of layer l is delta[l] inputs[l]^T (weights) and
/// delta[l] (bias), so the empirical NTK factorizes layer by layer.
struct Tangent {
    std::vector<Vector> delta;
    std::vector<Vector> inputs;
    double raw = 0.0;
    double prob = 0.0;
};

inline Tangent tangent_from_trace(const NetworkState& net, ForwardTrace tr) {
    const std::size_t layers = net.layer_count();
    Tangent t;
    t.delta.resize(layers);
    t.raw = tr.raw;
    t.prob = tr.out.prob;
    t.delta[layers - 1] = Vector::Constant(1, tr.out.dprob_draw);
    for (std::size_t l = layers - 1; l > 0; --l) {
        Vector g = net.weights[l].transpose() * t.delta[l];
        const Vector& z = tr.preacts[l - 1];
        for (Eigen::Index i = 0; i < g.size(); ++i)
            if (!(z[i] > 0.0)) g[i] = 0.0;
        t.delta[l - 1] = std::move(g);
    }
    t.inputs = std::move(tr.inputs);
    return t;
}

inline Tangent tangent(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale) {
    return tangent_from_trace(net, forward_trace(net, x, scale));
}

/// Empirical NTK entry grad_theta q(a) . grad_theta q(b) from the factorized form.
inline double ntk(const Tangent& a, const Tangent& b) {
    double acc = 0.0;
    for (std::size_t l = 0; l < a.delta.size(); ++l)
        acc += a.delta[l].dot(b.delta[l]) * (a.inputs[l].dot(b.inputs[l]) + 1.0);
    return acc;
}

inline Vector flatten_gradient(const Tangent& t) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < t.delta.size(); ++l)
        n += static_cast<std::size_t>(t.delta[l].size() * (t.inputs[l].size() + 1));
    Vector out(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < t.delta.size(); ++l) {
        for (Eigen::Index i = 0; i < t.delta[l].size(); ++i)
            for (Eigen::Index j = 0; j < t.inputs[l].size(); ++j) out[k++] = t.delta[l][i] * t.inputs[l][j];
        for (Eigen::Index i = 0; i < t.delta[l].size(); ++i) out[k++] = t.delta[l][i];
    }
    return out;
}

/// d prob / d theta in the documented flat order (deterministic pass).
inline Vector param_gradient(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale) {
    return flatten_gradient(tangent(net, x, scale));
}

inline Vector input_gradient_from_tangent(const NetworkState& net, const Tangent& t) {
    return net.weights.front().transpose() * t.delta.front();
}

/// d prob / d x for the (normalized) network input.
inline Vector input_gradient(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale) {
    return input_gradient_from_tangent(net, tangent(net, x, scale));
}

// ---------------------------------------------------------------------------
// Batched deterministic evaluation

/// Activations of the last hidden layer for every column of `inputs`.
inline Matrix last_hidden_batch(const NetworkState& net, const Matrix& inputs) {
    if (inputs.rows() != net.input_dim()) fail(ErrorKind::Shape, "input batch has the wrong dimension");
    Matrix a = inputs;
    for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
        Matrix z = net.weights[l] * a;
        z.colwise() += net.biases[l];
        a = z.cwiseMax(0.0);
    }
    return a;
}

inline Vector raw_from_last_hidden(const NetworkState& net, const Matrix& hidden) {
    Vector raw = (net.weights.back() * hidden).transpose();
    raw.array() += net.biases.back()[0];
    return raw;
}

inline Vector forward_batch(const NetworkState& net, const Matrix& inputs, const PsychScaleConfig& scale) {
    const Vector raw = raw_from_last_hidden(net, last_hidden_batch(net, inputs));
    Vector p(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) p[i] = squash(raw[i], scale).prob;
    return p;
}

// ---------------------------------------------------------------------------
// Loss

inline double clamp_log(double v, double clamp) { return std::clamp(std::log(v), -clamp, clamp); }

/// Mean of -[y log q + (1 - y) log(1 - q)] with each log clamped to [-clamp, clamp].
inline double bce_loss(std::span<const double> preds, std::span<const double> labels, double clamp = 100.0) {
    if (preds.empty()) fail(ErrorKind::EmptyDataset, "bce_loss needs at least one sample");
    if (preds.size() != labels.size()) fail(ErrorKind::Shape, "preds and labels differ in length");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double y = labels[i];
        double term = 0.0;
        if (y != 0.0) term += y * clamp_log(preds[i], clamp);
        if (y != 1.0) term += (1.0 - y) * clamp_log(1.0 - preds[i], clamp);
        acc -= term;
    }
    return acc / static_cast<double>(preds.size());
}

inline double bce_term(const Squashed& s, double y, double clamp) {
    double term = 0.0;
    if (y != 0.0) term += y * clamp_log(s.prob, clamp);
    if (y != 1.0) term += (1.0 - y) * clamp_log(s.complement, clamp);
    return -term;
}

/// d(-[y log q + (1-y) log(1-q)]) / d raw; a clamped log contributes nothing.
inline double bce_term_draw(const Squashed& s, double y, double clamp) {
    double g = 0.0;
    if (y != 0.0 && std::log(s.prob) > -clamp) g -= y * s.dprob_draw / s.prob;
    if (y != 1.0 && std::log(s.complement) > -clamp) g += (1.0 - y) * s.dprob_draw / s.complement;
    return g;
}

/// Deterministic (no dropout, no input noise) clamped BCE over the dataset.
inline double dataset_loss(const NetworkState& net, const TrialDataset& data, const PsychScaleConfig& scale,
                           double clamp = 100.0) {
    if (data.empty()) fail(ErrorKind::EmptyDataset, "dataset is empty");
    const Matrix x = data.normalized_stimuli();
    const Vector raw = raw_from_last_hidden(net, last_hidden_batch(net, x));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < raw.size(); ++i)
        acc += bce_term(squash(raw[i], scale), data.records[static_cast<std::size_t>(i)].response, clamp);
    return acc / static_cast<double>(raw.size());
}

// ---------------------------------------------------------------------------
// Monte-Carlo dropout

struct McStats {
    double mean = 0.0;
    double variance = 0.0;
};

/// M x width matrix of inverted-dropout multipliers for the last hidden layer.
inline Matrix sample_last_layer_masks(int width, int samples, double p, std::uint64_t seed) {
    Matrix masks(samples, width);
    SplitMix64 gen(derive_seed(seed, {0xd20f}));
    const double keep = p > 0.0 ? 1.0 / (1.0 - p) : 1.0;
    for (Eigen::Index m = 0; m < masks.rows(); ++m)
        for (Eigen::Index j = 0; j < masks.cols(); ++j) masks(m, j) = gen.uniform() < p ? 0.0 : keep;
    return masks;
}

/// Mean and population variance of the scaled output when only the last
/// hidden layer is resampled; `hidden` is that layer's deterministic activation.
inline McStats mc_dropout_from_hidden(const NetworkState& net, const Vector& hidden, const PsychScaleConfig& scale,
                                      const Matrix& masks) {
    McStats st;
    if (net.hidden_count() == 0) {
        st.mean = squash(net.biases.back()[0] + net.weights.back().row(0).dot(hidden), scale).prob;
        return st;
    }
    const Vector contrib = net.weights.back().row(0).transpose().cwiseProduct(hidden);
    const Vector raw = (masks * contrib).array() + net.biases.back()[0];
    double sum = 0.0, sum_sq = 0.0;
    for (Eigen::Index m = 0; m < raw.size(); ++m) {
        const double q = squash(raw[m], scale).prob;
        sum += q;
        sum_sq += q * q;
    }
    const double n = static_cast<double>(raw.size());
    st.mean = sum / n;
    st.variance = std::max(0.0, sum_sq / n - st.mean * st.mean);
    return st;
}

inline McStats mc_dropout_stats(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale, int samples,
                                std::uint64_t seed, double dropout_p = 0.1) {
    if (samples < 2) fail(ErrorKind::InvalidArgument, "mc_dropout_stats needs M >= 2");
    check_input(net, x);
    const int width = net.layer_sizes[net.layer_sizes.size() - 2];
    const Matrix masks = sample_last_layer_masks(width, samples, dropout_p, seed);
    const Matrix hidden = last_hidden_batch(net, x);
    return mc_dropout_from_hidden(net, hidden.col(0), scale, masks);
}

// ---------------------------------------------------------------------------
// Training

/// Annealing-weighted Fisher energy: sum_k lr_k / (N K eta0) * ||grad L||^2_k.
inline double fisher_energy_from_epochs(std::span<const double> grad_norm_sq, std::span<const double> learning_rates,
                                        std::size_t n_samples, double eta0) {
    if (n_samples == 0) fail(ErrorKind::EmptyDataset, "fisher energy needs a nonempty dataset");
    if (grad_norm_sq.size() != learning_rates.size()) fail(ErrorKind::Shape, "per-epoch series differ in length");
    if (grad_norm_sq.empty()) return 0.0;
    const double denom = static_cast<double>(n_samples) * static_cast<double>(grad_norm_sq.size()) * eta0;
    double e = 0.0;
    for (std::size_t k = 0; k < grad_norm_sq.size(); ++k) e += learning_rates[k] / denom * grad_norm_sq[k];
    return e;
}

/// W <- lambda W + N(0, sigma^2), applied to every weight and bias.
inline void shrink_perturb(NetworkState& net, double lambda, double sigma, std::uint64_t seed) {
    SplitMix64 gen(derive_seed(seed, {0x5b1d}));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        for (Eigen::Index i = 0; i < net.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < net.weights[l].cols(); ++j)
                net.weights[l](i, j) = lambda * net.weights[l](i, j) + (sigma > 0.0 ? sigma * standard_normal(gen) : 0.0);
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i)
            net.biases[l][i] = lambda * net.biases[l][i] + (sigma > 0.0 ? sigma * standard_normal(gen) : 0.0);
    }
}

/// Identity of a record for seeding its per-epoch noise stream. Keyed by
/// content, so reordering the records does not change which noise each gets.
inline std::uint64_t record_key(const TrialRecord& r) {
    return hash_doubles(std::span<const double>(r.stimulus.data(), static_cast<std::size_t>(r.stimulus.size())),
                        0x7ec0 + static_cast<std::uint64_t>(r.response));
}

/// Per-(epoch, record) stream. Draw order: K input-noise normals, then one
/// uniform per hidden unit (layer by layer) deciding its dropout.
inline SplitMix64 record_stream(std::uint64_t seed, int epoch, std::uint64_t key) {
    return SplitMix64(derive_seed(seed, {static_cast<std::uint64_t>(epoch), key}));
}

struct TrainResult {
    NetworkState net;
    double fisher_energy = 0.0;
    std::vector<double> grad_norm_sq;    // per epoch
    std::vector<double> learning_rates;  // per epoch
    std::vector<double> epoch_loss;      // stochastic training loss per epoch
};

/// One trial of training: shrink-and-perturb once, then Adam epochs on the
/// clamped BCE with annealed learning rate, fresh dropout masks and input
/// noise each epoch. Adam moments start from zero every call. The epoch
/// gradient behind the Fisher energy is the share-weighted sum of the batch
/// gradients, each taken before its own update.
inline TrainResult train_trial(const NetworkState& start, const TrialDataset& data, const TrainConfig& cfg,
                               const PsychScaleConfig& scale, std::uint64_t seed) {
    if (data.empty()) fail(ErrorKind::EmptyDataset, "cannot train on an empty dataset");
    cfg.validate();
    TrainResult res;
    res.net = start;
    NetworkState& net = res.net;
    shrink_perturb(net, cfg.shrink_lambda, cfg.perturb_sigma, seed);

    const std::size_t layers = net.layer_count();
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    const Eigen::Index k_dim = net.input_dim();
    const Matrix x_clean = data.normalized_stimuli();
    if (x_clean.rows() != k_dim) fail(ErrorKind::Shape, "dataset dimension does not match the network");
    const Vector y = data.labels();
    std::vector<std::uint64_t> keys(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) keys[i] = record_key(data.records[i]);

    std::vector<Matrix> m_w(layers), v_w(layers), g_w(layers);
    std::vector<Vector> m_b(layers), v_b(layers), g_b(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        m_w[l] = v_w[l] = Matrix::Zero(net.weights[l].rows(), net.weights[l].cols());
        m_b[l] = v_b[l] = Vector::Zero(net.biases[l].size());
    }

    std::vector<Matrix> masks(net.hidden_count());
    for (std::size_t l = 0; l < masks.size(); ++l) masks[l].resize(net.layer_sizes[l + 1], n);
    std::vector<Matrix> e_w(layers);
    std::vector<Vector> e_b(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        e_w[l] = Matrix::Zero(net.weights[l].rows(), net.weights[l].cols());
        e_b[l] = Vector::Zero(net.biases[l].size());
    }
    const Eigen::Index batch = cfg.batch_size > 0 ? std::min<Eigen::Index>(cfg.batch_size, n) : n;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::vector<Matrix> bmask(masks.size());
    Vector yb(batch);
    std::vector<Matrix> acts(layers);   // acts[l] enters layer l
    std::vector<Matrix> pre(layers);
    Matrix x_noisy(k_dim, n);
    const double keep = cfg.dropout_p > 0.0 ? 1.0 / (1.0 - cfg.dropout_p) : 1.0;

    double b1_pow = 1.0, b2_pow = 1.0;
    res.grad_norm_sq.reserve(static_cast<std::size_t>(cfg.epochs_per_trial));
    res.learning_rates.reserve(static_cast<std::size_t>(cfg.epochs_per_trial));
    for (int epoch = 0; epoch < cfg.epochs_per_trial; ++epoch) {
        for (Eigen::Index i = 0; i < n; ++i) {
            SplitMix64 gen = record_stream(seed, epoch, keys[static_cast<std::size_t>(i)]);
            for (Eigen::Index d = 0; d < k_dim; ++d)
                x_noisy(d, i) = x_clean(d, i) + cfg.input_noise_sigma * standard_normal(gen);
            for (auto& mk : masks)
                for (Eigen::Index u = 0; u < mk.rows(); ++u) mk(u, i) = gen.uniform() < cfg.dropout_p ? 0.0 : keep;
        }

        // Batch order is a hash of (seed, epoch, record key), so it does not
        // depend on how the records are stored.
        if (batch < n) {
            std::vector<std::pair<std::uint64_t, Eigen::Index>> keyed(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i)
                keyed[static_cast<std::size_t>(i)] = {derive_seed(seed, {0xba7c, static_cast<std::uint64_t>(epoch), keys[static_cast<std::size_t>(i)]}), i};
            std::sort(keyed.begin(), keyed.end());
            for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = keyed[static_cast<std::size_t>(i)].second;
        }

        const double lr = cfg.learning_rate(epoch);
        for (std::size_t l = 0; l < layers; ++l) {
            e_w[l].setZero();
            e_b[l].setZero();
        }
        double loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index nb = std::min(batch, n - start);
            const double share = static_cast<double>(nb) / static_cast<double>(n);
            if (batch < n) {
                const auto idx = std::span<const Eigen::Index>(order).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(nb));
                acts[0] = x_noisy(Eigen::all, idx);
                for (std::size_t l = 0; l < masks.size(); ++l) bmask[l] = masks[l](Eigen::all, idx);
                for (Eigen::Index i = 0; i < nb; ++i) yb[i] = y[idx[static_cast<std::size_t>(i)]];
            } else {
                acts[0] = x_noisy;
                for (std::size_t l = 0; l < masks.size(); ++l) bmask[l] = masks[l];
                yb = y;
            }
            for (std::size_t l = 0; l < layers; ++l) {
                pre[l].noalias() = net.weights[l] * acts[l];
                pre[l].colwise() += net.biases[l];
                if (l + 1 < layers) acts[l + 1] = pre[l].cwiseMax(0.0).cwiseProduct(bmask[l]);
            }

            Matrix g(1, nb);
            for (Eigen::Index i = 0; i < nb; ++i) {
                const Squashed s = squash(pre[layers - 1](0, i), scale);
                loss += bce_term(s, yb[i], cfg.log_clamp);
                g(0, i) = bce_term_draw(s, yb[i], cfg.log_clamp) / static_cast<double>(nb);
            }

            for (std::size_t l = layers; l-- > 0;) {
                g_w[l].noalias() = g * acts[l].transpose();
                g_b[l] = g.rowwise().sum().transpose();
                e_w[l] += share * g_w[l];
                e_b[l] += share * g_b[l];
                if (l > 0) {
                    Matrix back = net.weights[l].transpose() * g;
                    g = (back.array() * bmask[l - 1].array() * (pre[l - 1].array() > 0.0).cast<double>()).matrix();
                }
            }

            b1_pow *= cfg.adam_beta1;
            b2_pow *= cfg.adam_beta2;
            const double c1 = 1.0 / (1.0 - b1_pow);
            const double c2 = 1.0 / (1.0 - b2_pow);
            const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2, eps = cfg.adam_epsilon;
            for (std::size_t l = 0; l < layers; ++l) {
                m_w[l] = b1 * m_w[l] + (1.0 - b1) * g_w[l];
                v_w[l] = b2 * v_w[l] + (1.0 - b2) * g_w[l].cwiseAbs2();
                net.weights[l].array() -= lr * (m_w[l].array() * c1) / ((v_w[l].array() * c2).sqrt() + eps);
                m_b[l] = b1 * m_b[l] + (1.0 - b1) * g_b[l];
                v_b[l] = b2 * v_b[l] + (1.0 - b2) * g_b[l].cwiseAbs2();
                net.biases[l].array() -= lr * (m_b[l].array() * c1) / ((v_b[l].array() * c2).sqrt() + eps);
            }
        }
        res.epoch_loss.push_back(loss / static_cast<double>(n));
        double norm_sq = 0.0;
        for (std::size_t l = 0; l < layers; ++l) norm_sq += e_w[l].squaredNorm() + e_b[l].squaredNorm();
        res.grad_norm_sq.push_back(norm_sq);
        res.learning_rates.push_back(lr);
    }
    res.fisher_energy = fisher_energy_from_epochs(res.grad_norm_sq, res.learning_rates, data.size(), cfg.eta0);
    return res;
}

}  // namespace nest
