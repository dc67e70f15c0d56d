#pragma once

// The estimation loop: record a response, retrain, monitor Fisher-energy
// convergence and queue the next query. Sessions serialize to a versioned
// JSON document.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nest/acquisition.hpp"
#include "nest/bounds.hpp"
#include "nest/errors.hpp"
#include "nest/net.hpp"
#include "nest/rng.hpp"
#include "nest/sampling.hpp"

namespace nest {

using json = nlohmann::json;

inline constexpr const char* kSessionFormat = "nest-session";
inline constexpr int kSessionVersion = 1;

/// Windowed Fisher-difference level of a random observer, by dimension.
/// Dimensions outside 2..6 use a least-squares fit of log(level) on K.
inline double default_baseline_level(int dim) {
    static constexpr int ks[] = {2, 3, 4, 5, 6};
    static constexpr double levels[] = {9e-4, 7e-4, 6e-4, 5e-4, 4e-4};
    for (int i = 0; i < 5; ++i)
        if (ks[i] == dim) return levels[i];
    double mk = 0.0, ml = 0.0;
    for (int i = 0; i < 5; ++i) {
        mk += ks[i] / 5.0;
        ml += std::log(levels[i]) / 5.0;
    }
    double sxy = 0.0, sxx = 0.0;
    for (int i = 0; i < 5; ++i) {
        sxy += (ks[i] - mk) * (std::log(levels[i]) - ml);
        sxx += (ks[i] - mk) * (ks[i] - mk);
    }
    const double slope = sxy / sxx;
    return std::exp(ml + slope * (dim - mk));
}

struct ConvergenceConfig {
    int window = 15;
    std::optional<double> baseline_level;  // unset: per-dimension default
    double snr_cutoff = 10.0;

    double baseline_for(int dim) const { return baseline_level ? *baseline_level : default_baseline_level(dim); }

    void validate() const {
        if (window < 2) fail(ErrorKind::Config, "convergence window must be >= 2");
        if (baseline_level && !(*baseline_level > 0.0)) fail(ErrorKind::Config, "baseline_level must be > 0");
        if (!(snr_cutoff >= 1.0)) fail(ErrorKind::Config, "snr_cutoff must be >= 1");
    }
};

struct SessionConfig {
    int dim = 2;
    Bounds bounds = Bounds::uniform(2, -1.0, 1.0);
    PsychScaleConfig scale;
    TrainConfig train;
    AcquisitionConfig acq;
    ConvergenceConfig convergence;
    std::uint64_t seed = 0;
    std::optional<int> grid_levels;
    std::vector<int> hidden_widths = default_hidden_widths();

    /// Every problem found, as (field, message) pairs.
    std::vector<FieldDiagnostic> diagnose() const {
        std::vector<FieldDiagnostic> out;
        auto check = [&](const char* field, auto&& fn) {
            try {
                fn();
            } catch (const Error& e) {
                out.emplace_back(field, e.what());
            }
        };
        if (dim < 1) out.emplace_back("dim", "dim must be >= 1");
        check("bounds", [&] {
            bounds.validate();
            if (bounds.dim() != dim) fail(ErrorKind::InvalidBounds, "bounds dimension differs from dim");
        });
        check("scale", [&] { scale.validate(); });
        check("train", [&] { train.validate(); });
        check("acquisition", [&] { acq.validate(); });
        check("convergence", [&] { convergence.validate(); });
        if (grid_levels && *grid_levels < 2) out.emplace_back("grid_levels", "grid_levels must be >= 2");
        if (hidden_widths.empty()) out.emplace_back("hidden_widths", "at least one hidden layer is required");
        for (int w : hidden_widths)
            if (w < 1) out.emplace_back("hidden_widths", "hidden widths must be >= 1");
        return out;
    }

    void validate() const {
        auto problems = diagnose();
        if (problems.empty()) return;
        std::string msg = "invalid session config";
        for (const auto& [field, m] : problems) msg += "; " + field + ": " + m;
        throw Error(ErrorKind::Config, msg, std::move(problems));
    }

    std::vector<int> layer_sizes() const {
        std::vector<int> s{dim};
        s.insert(s.end(), hidden_widths.begin(), hidden_widths.end());
        s.push_back(1);
        return s;
    }
};

struct ConvergenceStatus {
    bool converged = false;
    std::optional<double> snr;
    std::optional<double> window_mean;
};

struct SessionState {
    SessionConfig config;
    int trial_count = 0;
    TrialDataset dataset;
    NetworkState net;
    std::vector<double> fisher_history;
    std::optional<Vector> pending_query;
    bool pending_random = false;
    bool converged = false;
    std::uint64_t sobol_index = 1;
    std::optional<CandidateScore> last_diagnostics;  // not serialized

    std::array<int, 2> class_counts() const {
        std::array<int, 2> c{0, 0};
        for (const auto& r : dataset.records) ++c[r.response ? 1 : 0];
        return c;
    }
};

inline std::uint64_t trial_seed(std::uint64_t seed, int trial, std::uint64_t purpose) {
    return derive_seed(seed, {static_cast<std::uint64_t>(trial), purpose});
}

inline constexpr std::uint64_t kTrainPurpose = 0x7a1;
inline constexpr std::uint64_t kSelectPurpose = 0x5e1;

inline ConvergenceStatus convergence_check(const std::vector<double>& fisher, std::array<int, 2> class_counts,
                                           const ConvergenceConfig& cfg, int dim) {
    ConvergenceStatus st;
    if (class_counts[0] < 1 || class_counts[1] < 1) return st;
    const std::size_t w = static_cast<std::size_t>(cfg.window);
    if (fisher.size() < w + 1) return st;
    double acc = 0.0;
    for (std::size_t i = fisher.size() - w; i < fisher.size(); ++i) acc += std::abs(fisher[i] - fisher[i - 1]);
    const double mean = acc / static_cast<double>(w);
    const double baseline = cfg.baseline_for(dim);
    st.window_mean = mean;
    st.snr = mean > 0.0 ? baseline / mean : std::numeric_limits<double>::infinity();
    st.converged = *st.snr >= cfg.snr_cutoff;
    return st;
}

inline ConvergenceStatus convergence_check(const SessionState& s) {
    return convergence_check(s.fisher_history, s.class_counts(), s.config.convergence, s.config.dim);
}

/// Fisher energy of one fresh training pass from `start` on `data`.
inline double fisher_energy(const NetworkState& start, const TrialDataset& data, const TrainConfig& cfg,
                            const PsychScaleConfig& scale, std::uint64_t seed) {
    return train_trial(start, data, cfg, scale, seed).fisher_energy;
}

namespace detail {

inline void queue_next(SessionState& s) {
    const SessionConfig& cfg = s.config;
    const int t = s.trial_count + 1;
    SelectionRequest req{t, s.sobol_index, trial_seed(cfg.seed, t, kSelectPurpose)};
    Selection sel = select_next(s.net, s.dataset, cfg.acq, cfg.bounds, cfg.scale, req);
    Vector x = sel.x;
    if (cfg.grid_levels) x = snap_to_grid(x, *cfg.grid_levels, cfg.bounds);
    s.pending_query = std::move(x);
    s.pending_random = sel.random_exploration;
    s.sobol_index = sel.next_sobol_index;
    s.last_diagnostics = std::move(sel.diagnostics);
}

}  // namespace detail

inline SessionState new_session(const SessionConfig& cfg) {
    cfg.validate();
    SessionState s;
    s.config = cfg;
    s.dataset.bounds = cfg.bounds;
    s.dataset.norm_mean = Vector::Zero(cfg.dim);
    s.dataset.norm_std = Vector::Ones(cfg.dim);
    s.net = init_network(cfg.layer_sizes(), derive_seed(cfg.seed, {0x1a17}));
    Vector x = sobol_point(1, cfg.dim, cfg.bounds);
    if (cfg.grid_levels) x = snap_to_grid(x, *cfg.grid_levels, cfg.bounds);
    s.pending_query = std::move(x);
    s.pending_random = true;
    s.sobol_index = 2;
    return s;
}

/// Appends (x, y), retrains and queues the next query. The input state is
/// left untouched.
inline SessionState record_response(const SessionState& state, const Vector& x, int y) {
    const SessionConfig& cfg = state.config;
    if (x.size() != cfg.dim) fail(ErrorKind::Shape, "stimulus dimension does not match the session");
    if (!x.allFinite() || !cfg.bounds.contains(x, 1e-12)) fail(ErrorKind::Bounds, "stimulus outside the session bounds");
    if (y != 0 && y != 1) fail(ErrorKind::InvalidArgument, "response must be 0 or 1");

    SessionState s = state;
    s.dataset.records.push_back({x, y});
    s.trial_count += 1;
    const NormStats ns = fit_normalization(s.dataset, s.trial_count, cfg.train.normalization_freeze_trial);
    s.dataset.norm_mean = ns.mean;
    s.dataset.norm_std = ns.std;

    TrainResult tr = train_trial(s.net, s.dataset, cfg.train, cfg.scale, trial_seed(cfg.seed, s.trial_count, kTrainPurpose));
    s.net = std::move(tr.net);
    s.fisher_history.push_back(tr.fisher_energy);
    s.converged = convergence_check(s).converged;
    detail::queue_next(s);
    return s;
}

// ---------------------------------------------------------------------------
// Prediction helpers and ensembles

/// Everything needed to evaluate a trained model at native-unit stimuli.
struct ModelSnapshot {
    NetworkState net;
    Vector norm_mean;
    Vector norm_std;
    Bounds bounds;
    PsychScaleConfig scale;

    double predict(const Vector& x) const { return forward(net, (x - norm_mean).cwiseQuotient(norm_std), scale).prob; }

    Vector predict_batch(const std::vector<Vector>& xs) const {
        Matrix z(net.input_dim(), static_cast<Eigen::Index>(xs.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) z.col(static_cast<Eigen::Index>(i)) = (xs[i] - norm_mean).cwiseQuotient(norm_std);
        return forward_batch(net, z, scale);
    }
};

inline ModelSnapshot snapshot_of(const SessionState& s) {
    return {s.net, s.dataset.norm_mean, s.dataset.norm_std, s.config.bounds, s.config.scale};
}

/// Equal-weight average of member probabilities.
class EnsemblePredictor {
public:
    explicit EnsemblePredictor(std::vector<ModelSnapshot> members) : members_(std::move(members)) {
        if (members_.empty()) fail(ErrorKind::InvalidArgument, "ensemble needs at least one member");
        const ModelSnapshot& a = members_.front();
        for (const ModelSnapshot& m : members_) {
            const bool same = m.net.input_dim() == a.net.input_dim() && m.bounds.low == a.bounds.low &&
                              m.bounds.high == a.bounds.high && m.scale.alpha == a.scale.alpha &&
                              m.scale.gamma_lapse == a.scale.gamma_lapse && m.scale.rho == a.scale.rho &&
                              m.scale.t_thresh == a.scale.t_thresh;
            if (!same) fail(ErrorKind::Mismatch, "ensemble members differ in dimension, bounds or scale");
        }
    }

    double predict(const Vector& x) const {
        double acc = 0.0;
        for (const ModelSnapshot& m : members_) acc += m.predict(x);
        return acc / static_cast<double>(members_.size());
    }

    std::size_t size() const { return members_.size(); }

private:
    std::vector<ModelSnapshot> members_;
};

inline EnsemblePredictor ensemble_average(std::vector<ModelSnapshot> members) { return EnsemblePredictor(std::move(members)); }

// ---------------------------------------------------------------------------
// JSON documents

inline json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vector vector_from_json(const json& j) {
    if (!j.is_array()) fail(ErrorKind::Parse, "expected a numeric array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) fail(ErrorKind::Parse, "expected a numeric array");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline json config_to_json(const SessionConfig& c) {
    const AcquisitionConfig& a = c.acq;
    const TrainConfig& t = c.train;
    json j;
    j["dim"] = c.dim;
    j["bounds"] = {{"low", vector_to_json(c.bounds.low)}, {"high", vector_to_json(c.bounds.high)}};
    j["scale"] = {{"alpha", c.scale.alpha}, {"gamma_lapse", c.scale.gamma_lapse}, {"rho", c.scale.rho}, {"t_thresh", c.scale.t_thresh}};
    j["train"] = {{"eta0", t.eta0},
                  {"epochs_per_trial", t.epochs_per_trial},
                  {"final_lr_fraction", t.final_lr_fraction},
                  {"shrink_lambda", t.shrink_lambda},
                  {"perturb_sigma", t.perturb_sigma},
                  {"dropout_p", t.dropout_p},
                  {"input_noise_sigma", t.input_noise_sigma},
                  {"log_clamp", t.log_clamp},
                  {"normalization_freeze_trial", t.normalization_freeze_trial},
                  {"adam_beta1", t.adam_beta1},
                  {"adam_beta2", t.adam_beta2},
                  {"adam_epsilon", t.adam_epsilon},
                  {"batch_size", t.batch_size}};
    j["acquisition"] = {{"weights", {a.weights.a, a.weights.b, a.weights.c, a.weights.d}},
                        {"components", a.enabled.to_string()},
                        {"parzen_h", a.parzen_h},
                        {"mc_samples", a.mc_samples},
                        {"lookahead_subsample", a.lookahead_subsample},
                        {"ntk_jitter", a.ntk_jitter},
                        {"candidate_count", a.candidate_count},
                        {"restarts", a.restarts},
                        {"refine_iterations", a.refine_iterations},
                        {"fd_step", a.fd_step},
                        {"dropout_p", a.dropout_p},
                        {"exploration", {{"p0", a.exploration.p0}, {"f", a.exploration.f}, {"p_base", a.exploration.p_base}}}};
    j["convergence"] = {{"window", c.convergence.window},
                        {"baseline_level", c.convergence.baseline_level ? json(*c.convergence.baseline_level) : json(nullptr)},
                        {"snr_cutoff", c.convergence.snr_cutoff}};
    j["seed"] = c.seed;
    j["grid_levels"] = c.grid_levels ? json(*c.grid_levels) : json(nullptr);
    j["hidden_widths"] = c.hidden_widths;
    return j;
}

namespace detail {

/// Reads j[key] into out when present; type problems become diagnostics.
template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& path, std::vector<FieldDiagnostic>& diag) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        diag.emplace_back(path + key, "wrong type");
    }
}

}  // namespace detail

/// Parses a (possibly partial) config; missing fields keep their defaults.
/// Throws a config error listing every malformed or invalid field.
inline SessionConfig config_from_json(const json& j) {
    using detail::read_field;
    if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    SessionConfig c;
    std::vector<FieldDiagnostic> diag;
    read_field(j, "dim", c.dim, "", diag);
    if (j.contains("bounds")) {
        try {
            const json& b = j.at("bounds");
            c.bounds = Bounds(vector_from_json(b.at("low")), vector_from_json(b.at("high")));
        } catch (const std::exception&) {
            diag.emplace_back("bounds", "bounds needs numeric arrays 'low' and 'high'");
        }
    } else {
        c.bounds = Bounds::uniform(std::max(c.dim, 1), -1.0, 1.0);
    }
    if (j.contains("scale")) {
        const json& s = j.at("scale");
        read_field(s, "alpha", c.scale.alpha, "scale.", diag);
        read_field(s, "gamma_lapse", c.scale.gamma_lapse, "scale.", diag);
        read_field(s, "rho", c.scale.rho, "scale.", diag);
        read_field(s, "t_thresh", c.scale.t_thresh, "scale.", diag);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        TrainConfig& o = c.train;
        read_field(t, "eta0", o.eta0, "train.", diag);
        read_field(t, "epochs_per_trial", o.epochs_per_trial, "train.", diag);
        read_field(t, "final_lr_fraction", o.final_lr_fraction, "train.", diag);
        read_field(t, "shrink_lambda", o.shrink_lambda, "train.", diag);
        read_field(t, "perturb_sigma", o.perturb_sigma, "train.", diag);
        read_field(t, "dropout_p", o.dropout_p, "train.", diag);
        read_field(t, "input_noise_sigma", o.input_noise_sigma, "train.", diag);
        read_field(t, "log_clamp", o.log_clamp, "train.", diag);
        read_field(t, "normalization_freeze_trial", o.normalization_freeze_trial, "train.", diag);
        read_field(t, "adam_beta1", o.adam_beta1, "train.", diag);
        read_field(t, "adam_beta2", o.adam_beta2, "train.", diag);
        read_field(t, "adam_epsilon", o.adam_epsilon, "train.", diag);
        read_field(t, "batch_size", o.batch_size, "train.", diag);
    }
    if (j.contains("acquisition")) {
        const json& a = j.at("acquisition");
        AcquisitionConfig& o = c.acq;
        if (a.contains("weights")) {
            try {
                const auto w = a.at("weights").get<std::vector<double>>();
                if (w.size() != 4) throw std::runtime_error("size");
                o.weights = {w[0], w[1], w[2], w[3]};
            } catch (const std::exception&) {
                diag.emplace_back("acquisition.weights", "weights must be four numbers [a, b, c, d]");
            }
        }
        std::string comps;
        read_field(a, "components", comps, "acquisition.", diag);
        if (!comps.empty()) {
            try {
                o.enabled = ComponentSet::parse(comps);
            } catch (const Error& e) {
                diag.emplace_back("acquisition.components", e.what());
            }
        }
        read_field(a, "parzen_h", o.parzen_h, "acquisition.", diag);
        read_field(a, "mc_samples", o.mc_samples, "acquisition.", diag);
        read_field(a, "lookahead_subsample", o.lookahead_subsample, "acquisition.", diag);
        read_field(a, "ntk_jitter", o.ntk_jitter, "acquisition.", diag);
        read_field(a, "candidate_count", o.candidate_count, "acquisition.", diag);
        read_field(a, "restarts", o.restarts, "acquisition.", diag);
        read_field(a, "refine_iterations", o.refine_iterations, "acquisition.", diag);
        read_field(a, "fd_step", o.fd_step, "acquisition.", diag);
        read_field(a, "dropout_p", o.dropout_p, "acquisition.", diag);
        if (a.contains("exploration")) {
            const json& e = a.at("exploration");
            read_field(e, "p0", o.exploration.p0, "acquisition.exploration.", diag);
            read_field(e, "f", o.exploration.f, "acquisition.exploration.", diag);
            read_field(e, "p_base", o.exploration.p_base, "acquisition.exploration.", diag);
        }
    }
    if (j.contains("convergence")) {
        const json& v = j.at("convergence");
        read_field(v, "window", c.convergence.window, "convergence.", diag);
        if (v.contains("baseline_level") && !v.at("baseline_level").is_null()) {
            double b = 0.0;
            read_field(v, "baseline_level", b, "convergence.", diag);
            c.convergence.baseline_level = b;
        }
        read_field(v, "snr_cutoff", c.convergence.snr_cutoff, "convergence.", diag);
    }
    read_field(j, "seed", c.seed, "", diag);
    if (j.contains("grid_levels") && !j.at("grid_levels").is_null()) {
        int g = 0;
        read_field(j, "grid_levels", g, "", diag);
        c.grid_levels = g;
    }
    read_field(j, "hidden_widths", c.hidden_widths, "", diag);

    if (diag.empty()) diag = c.diagnose();
    if (!diag.empty()) {
        std::string msg = "invalid session config";
        for (const auto& [field, m] : diag) msg += "; " + field + ": " + m;
        throw Error(ErrorKind::Config, msg, std::move(diag));
    }
    return c;
}

inline json network_to_json(const NetworkState& net) {
    json j;
    j["layer_sizes"] = net.layer_sizes;
    j["seed"] = net.rng_seed;
    json ws = json::array(), bs = json::array();
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        json w = json::array();
        for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) w.push_back(net.weights[l](r, c));
        ws.push_back(std::move(w));
        bs.push_back(vector_to_json(net.biases[l]));
    }
    j["weights"] = std::move(ws);
    j["biases"] = std::move(bs);
    return j;
}

inline NetworkState network_from_json(const json& j) {
    NetworkState net;
    net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    net.rng_seed = j.at("seed").get<std::uint64_t>();
    const json& ws = j.at("weights");
    const json& bs = j.at("biases");
    if (net.layer_sizes.size() < 2 || ws.size() + 1 != net.layer_sizes.size() || bs.size() != ws.size())
        fail(ErrorKind::Parse, "network layer count mismatch");
    for (std::size_t l = 0; l < ws.size(); ++l) {
        const Eigen::Index rows = net.layer_sizes[l + 1], cols = net.layer_sizes[l];
        const Vector flat = vector_from_json(ws[l]);
        if (flat.size() != rows * cols) fail(ErrorKind::Parse, "weight matrix size mismatch");
        Matrix w(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = flat[r * cols + c];
        net.weights.push_back(std::move(w));
        net.biases.push_back(vector_from_json(bs[l]));
    }
    net.validate();
    return net;
}

inline json export_state(const SessionState& s) {
    json j;
    j["format"] = kSessionFormat;
    j["version"] = kSessionVersion;
    j["config"] = config_to_json(s.config);
    j["trial_count"] = s.trial_count;
    json recs = json::array();
    for (const auto& r : s.dataset.records) recs.push_back({{"stimulus", vector_to_json(r.stimulus)}, {"response", r.response}});
    j["records"] = std::move(recs);
    j["normalization"] = {{"mean", vector_to_json(s.dataset.norm_mean)}, {"std", vector_to_json(s.dataset.norm_std)}};
    j["network"] = network_to_json(s.net);
    j["fisher_history"] = s.fisher_history;
    j["pending_query"] = s.pending_query ? vector_to_json(*s.pending_query) : json(nullptr);
    j["pending_random"] = s.pending_random;
    j["converged"] = s.converged;
    j["sobol_index"] = s.sobol_index;
    return j;
}

/// Rebuilds a session from an exported document. Any structural problem
/// raises a parse error and no state is produced.
inline SessionState import_state(const json& j) {
    try {
        if (!j.is_object() || j.value("format", std::string()) != kSessionFormat)
            fail(ErrorKind::Parse, "not a session document");
        if (!j.contains("version") || j.at("version").get<int>() != kSessionVersion)
            fail(ErrorKind::Parse, "unsupported session document version");
        SessionState s;
        s.config = config_from_json(j.at("config"));
        const SessionConfig& c = s.config;
        s.trial_count = j.at("trial_count").get<int>();
        s.dataset.bounds = c.bounds;
        for (const json& r : j.at("records")) {
            TrialRecord rec{vector_from_json(r.at("stimulus")), r.at("response").get<int>()};
            if (rec.stimulus.size() != c.dim || (rec.response != 0 && rec.response != 1))
                fail(ErrorKind::Parse, "malformed trial record");
            s.dataset.records.push_back(std::move(rec));
        }
        if (static_cast<std::size_t>(s.trial_count) != s.dataset.records.size())
            fail(ErrorKind::Parse, "trial_count disagrees with the record list");
        s.dataset.norm_mean = vector_from_json(j.at("normalization").at("mean"));
        s.dataset.norm_std = vector_from_json(j.at("normalization").at("std"));
        if (s.dataset.norm_mean.size() != c.dim || s.dataset.norm_std.size() != c.dim)
            fail(ErrorKind::Parse, "normalization size mismatch");
        s.net = network_from_json(j.at("network"));
        if (s.net.layer_sizes != c.layer_sizes()) fail(ErrorKind::Parse, "network shape does not match the config");
        s.fisher_history = j.at("fisher_history").get<std::vector<double>>();
        if (s.fisher_history.size() != s.dataset.records.size()) fail(ErrorKind::Parse, "fisher history length mismatch");
        if (!j.at("pending_query").is_null()) {
            s.pending_query = vector_from_json(j.at("pending_query"));
            if (s.pending_query->size() != c.dim) fail(ErrorKind::Parse, "pending query size mismatch");
        }
        s.pending_random = j.at("pending_random").get<bool>();
        s.converged = j.at("converged").get<bool>();
        s.sobol_index = j.at("sobol_index").get<std::uint64_t>();
        return s;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Parse) throw;
        throw Error(ErrorKind::Parse, e.what(), e.fields());
    } catch (const std::exception& e) {
        fail(ErrorKind::Parse, std::string("malformed session document: ") + e.what());
    }
}

inline std::string export_text(const SessionState& s) { return export_state(s).dump(); }

inline SessionState import_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::Parse, std::string("invalid JSON: ") + e.what());
    }
    return import_state(j);
}

}  // namespace nest
