#pragma once

// Monte-Carlo simulation harness: simulated observers, learning curves,
// batches, weight search and result emission.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "nest/acquisition.hpp"
#include "nest/metrics.hpp"
#include "nest/psychfun.hpp"
#include "nest/sampling.hpp"
#include "nest/session.hpp"

namespace nest {

struct FunctionSpec {
    Family family = Family::Novel2D;
    Mode mode = Mode::Detection;
    int dims = 0;             // only used by sphere and random
    bool randomize = false;   // draw parameters per run instead of the canonical set
    double gamma_lapse = 0.0;
    RandomizationRanges ranges;

    int dim() const { return family_dim(family, dims); }
};

inline SyntheticFunction make_function(const FunctionSpec& spec, std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, {0xf4}));
    SyntheticFunction fn = spec.randomize ? randomize_params(spec.family, rng, spec.mode, spec.dims, spec.ranges)
                                          : canonical_function(spec.family, spec.mode, spec.dims);
    fn.gamma_lapse = spec.gamma_lapse;
    return fn;
}

struct BenchmarkConfig {
    FunctionSpec function;
    int runs = 1;
    int trials_per_run = 150;
    std::uint64_t seed = 0;
    AcquisitionConfig acq;  // weights and ablation mask live here
    TrainConfig train;
    ConvergenceConfig convergence;
    std::optional<int> grid_levels;
    int test_set_size = 0;  // 0: default for the dimension
    bool compute_brier = true;
    int brier_mc_samples = 100;
    int threads = 1;  // worker threads for the runs of a batch
    std::string out;

    void validate() const {
        if (runs < 1) fail(ErrorKind::Config, "runs must be >= 1");
        if (trials_per_run < 1) fail(ErrorKind::Config, "trials_per_run must be >= 1");
        if (test_set_size < 0) fail(ErrorKind::Config, "test_set_size must be >= 0");
        if (brier_mc_samples < 2) fail(ErrorKind::Config, "brier_mc_samples must be >= 2");
        if (threads < 1) fail(ErrorKind::Config, "threads must be >= 1");
    }
};

/// Per-run seed: splitmix of the batch seed and the run index.
inline std::uint64_t run_seed(std::uint64_t batch_seed, int run_index) {
    return splitmix64_mix(batch_seed ^ splitmix64_mix(0xbe4c0000ULL + static_cast<std::uint64_t>(run_index)));
}

inline SessionConfig session_config_for(const BenchmarkConfig& cfg, const SyntheticFunction& fn, std::uint64_t seed) {
    SessionConfig s;
    s.dim = fn.dim();
    s.bounds = fn.bounds;
    s.scale.alpha = fn.alpha;
    s.scale.gamma_lapse = fn.gamma_lapse;
    s.train = cfg.train;
    s.acq = cfg.acq;
    s.convergence = cfg.convergence;
    s.seed = seed;
    s.grid_levels = cfg.grid_levels;
    return s;
}

/// Fixed evaluation points: a 64^K grid for K <= 2, 16^3 for K = 3 and
/// shifted Sobol points (4096 by default) above that.
inline std::vector<Vector> make_test_set(const Bounds& bounds, int size, std::uint64_t seed) {
    const int k = bounds.dim();
    std::vector<Vector> pts;
    if (size <= 0 && k <= 3) {
        const int levels = k <= 2 ? 64 : 16;
        long total = 1;
        for (int d = 0; d < k; ++d) total *= levels;
        pts.reserve(static_cast<std::size_t>(total));
        for (long i = 0; i < total; ++i) {
            Vector u(k);
            long rem = i;
            for (int d = 0; d < k; ++d) {
                u[d] = static_cast<double>(rem % levels) / (levels - 1);
                rem /= levels;
            }
            pts.push_back(bounds.from_unit(u));
        }
        return pts;
    }
    const int n = size > 0 ? size : 4096;
    SplitMix64 gen(derive_seed(seed, {0x7e57}));
    Vector shift(k);
    for (int d = 0; d < k; ++d) shift[d] = gen.uniform();
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pts.push_back(bounds.from_unit(shifted_sobol_unit(static_cast<std::uint64_t>(i), shift)));
    return pts;
}

inline std::vector<Vector> make_test_set(const SyntheticFunction& fn, int size, std::uint64_t seed) {
    return make_test_set(fn.bounds, size, seed);
}

struct MetricSeries {
    std::vector<double> rmse;
    std::vector<double> brier;
    double auc_rmse = 0.0;
    double auc_brier = 0.0;
    std::optional<int> convergence_trial;
};

struct RunResult {
    int run_index = 0;
    std::uint64_t seed = 0;
    MetricSeries series;
    std::vector<double> fisher_energy;
    std::vector<double> window_mean;  // NaN while the convergence statistic is undefined
    std::vector<bool> converged;
    std::vector<bool> random_query;
    std::optional<std::string> error;
};

/// Deterministic test-set evaluation of one model: RMSE from the plain
/// forward pass, Brier from last-layer MC dropout.
struct TestEvaluation {
    double rmse = 0.0;
    double brier = std::numeric_limits<double>::quiet_NaN();
};

inline TestEvaluation evaluate_on_test_set(const SessionState& s, const Matrix& test_native, const Vector& truth,
                                           const Matrix* mc_masks) {
    const PsychScaleConfig& scale = s.config.scale;
    const Matrix z = (test_native.colwise() - s.dataset.norm_mean).array().colwise() / s.dataset.norm_std.array();
    const Matrix hidden = last_hidden_batch(s.net, z);
    const Vector raw = raw_from_last_hidden(s.net, hidden);
    std::vector<double> pred(static_cast<std::size_t>(raw.size())), tr(static_cast<std::size_t>(raw.size()));
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        pred[static_cast<std::size_t>(i)] = squash(raw[i], scale).prob;
        tr[static_cast<std::size_t>(i)] = truth[i];
    }
    TestEvaluation ev;
    ev.rmse = rmse(pred, tr);
    if (mc_masks) {
        std::vector<double> mean(pred.size()), sd(pred.size());
        for (Eigen::Index i = 0; i < hidden.cols(); ++i) {
            const McStats st = mc_dropout_from_hidden(s.net, hidden.col(i), scale, *mc_masks);
            mean[static_cast<std::size_t>(i)] = st.mean;
            sd[static_cast<std::size_t>(i)] = std::sqrt(st.variance);
        }
        ev.brier = brier(mean, sd, tr, default_mu_star(scale.alpha));
    }
    return ev;
}

inline RunResult run_simulation(const BenchmarkConfig& cfg, int run_index) {
    cfg.validate();
    RunResult res;
    res.run_index = run_index;
    res.seed = run_seed(cfg.seed, run_index);
    const SyntheticFunction fn = make_function(cfg.function, res.seed);
    const std::vector<Vector> test = make_test_set(fn, cfg.test_set_size, res.seed);
    Matrix test_m(fn.dim(), static_cast<Eigen::Index>(test.size()));
    Vector truth(static_cast<Eigen::Index>(test.size()));
    for (std::size_t i = 0; i < test.size(); ++i) {
        test_m.col(static_cast<Eigen::Index>(i)) = test[i];
        truth[static_cast<Eigen::Index>(i)] = eval_truth(fn, test[i]);
    }

    SessionState s = new_session(session_config_for(cfg, fn, res.seed));
    std::optional<Matrix> masks;
    if (cfg.compute_brier)
        masks = sample_last_layer_masks(s.net.layer_sizes[s.net.layer_sizes.size() - 2], cfg.brier_mc_samples,
                                        cfg.acq.dropout_p, derive_seed(res.seed, {0xb1e2}));
    SplitMix64 observer(derive_seed(res.seed, {0x0b5}));
    try {
        for (int t = 1; t <= cfg.trials_per_run; ++t) {
            const Vector x = *s.pending_query;
            res.random_query.push_back(s.pending_random);
            const int y = sample_response(fn, x, observer);
            s = record_response(s, x, y);
            const TestEvaluation ev = evaluate_on_test_set(s, test_m, truth, masks ? &*masks : nullptr);
            res.series.rmse.push_back(ev.rmse);
            if (cfg.compute_brier) res.series.brier.push_back(ev.brier);
            const ConvergenceStatus cs = convergence_check(s);
            res.fisher_energy.push_back(s.fisher_history.back());
            res.window_mean.push_back(cs.window_mean.value_or(std::numeric_limits<double>::quiet_NaN()));
            res.converged.push_back(cs.converged);
            if (cs.converged && !res.series.convergence_trial) res.series.convergence_trial = t;
        }
    } catch (const Error& e) {
        res.error = e.what();
    }
    res.series.auc_rmse = auc(res.series.rmse);
    res.series.auc_brier = auc(res.series.brier);
    return res;
}

struct Aggregate {
    double mean = 0.0;
    double standard_error = 0.0;
};

inline Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    if (values.empty()) return a;
    const double n = static_cast<double>(values.size());
    for (double v : values) a.mean += v / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return a;
}

struct BatchReport {
    std::vector<RunResult> runs;
    Aggregate auc_rmse;
    Aggregate auc_brier;
};

inline BatchReport run_batch(const BenchmarkConfig& cfg) {
    cfg.validate();
    BatchReport rep;
    rep.runs.resize(static_cast<std::size_t>(cfg.runs));
    const int workers = std::clamp(cfg.threads, 1, cfg.runs);
    if (workers == 1) {
        for (int r = 0; r < cfg.runs; ++r) rep.runs[static_cast<std::size_t>(r)] = run_simulation(cfg, r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int r = next++; r < cfg.runs; r = next++) rep.runs[static_cast<std::size_t>(r)] = run_simulation(cfg, r);
            });
        for (std::thread& t : pool) t.join();
    }
    std::vector<double> ar, ab;
    for (const RunResult& r : rep.runs) {
        ar.push_back(r.series.auc_rmse);
        ab.push_back(r.series.auc_brier);
    }
    rep.auc_rmse = aggregate(ar);
    rep.auc_brier = aggregate(ab);
    return rep;
}

struct WeightScore {
    AcquisitionWeights weights;
    Aggregate auc_rmse;
};

/// Evaluates every weight tuple with run_batch and ranks by mean AUC of RMSE.
inline std::vector<WeightScore> weight_search(const BenchmarkConfig& base, const std::vector<AcquisitionWeights>& grid) {
    std::vector<WeightScore> out;
    for (const AcquisitionWeights& w : grid) {
        BenchmarkConfig cfg = base;
        cfg.acq.weights = w;
        cfg.compute_brier = false;
        out.push_back({w, run_batch(cfg).auc_rmse});
    }
    std::stable_sort(out.begin(), out.end(), [](const WeightScore& a, const WeightScore& b) { return a.auc_rmse.mean < b.auc_rmse.mean; });
    return out;
}

// ---------------------------------------------------------------------------
// Fisher calibration against the random observer

struct CalibrationReport {
    int dim = 0;
    double baseline_level = 0.0;
    std::vector<double> run_level;  // mean windowed difference over the tail of each run
    Aggregate level;
};

inline CalibrationReport fisher_calibration(const BenchmarkConfig& cfg, int tail) {
    BenchmarkConfig c = cfg;
    c.compute_brier = false;
    const BatchReport rep = run_batch(c);
    CalibrationReport out;
    out.dim = cfg.function.dim();
    out.baseline_level = cfg.convergence.baseline_for(out.dim);
    for (const RunResult& r : rep.runs) {
        double acc = 0.0;
        int n = 0;
        const std::size_t start = r.window_mean.size() > static_cast<std::size_t>(tail) ? r.window_mean.size() - static_cast<std::size_t>(tail) : 0;
        for (std::size_t i = start; i < r.window_mean.size(); ++i)
            if (std::isfinite(r.window_mean[i])) {
                acc += r.window_mean[i];
                ++n;
            }
        out.run_level.push_back(n > 0 ? acc / n : std::numeric_limits<double>::quiet_NaN());
    }
    out.level = aggregate(out.run_level);
    return out;
}

// ---------------------------------------------------------------------------
// Component maps

struct ComponentRow {
    Vector x;
    RawComponents raw;
    CandidateScore score;
};

/// Scores every point with all four components computed; normalizers are the
/// maxima over the given points.
inline std::vector<ComponentRow> component_map(const SessionState& s, const std::vector<Vector>& points, int trial) {
    const SessionConfig& c = s.config;
    AcquisitionContext ctx(s.net, s.dataset, c.scale, c.acq, trial_seed(c.seed, trial, kSelectPurpose), true);
    std::vector<RawComponents> raws;
    raws.reserve(points.size());
    for (const Vector& p : points) raws.push_back(ctx.raw(p));
    ctx.set_normalizers(max_raw(raws));
    std::vector<ComponentRow> rows;
    rows.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        CandidateScore sc;
        sc.x = points[i];
        sc.components = ctx.normalize(raws[i]);
        sc.combined = combine(sc.components, ctx.weights());
        rows.push_back({points[i], raws[i], sc});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Emission

inline json bench_config_to_json(const BenchmarkConfig& cfg) {
    const SyntheticFunction fn = canonical_function(cfg.function.family, cfg.function.mode, cfg.function.dims);
    SessionConfig s = session_config_for(cfg, fn, cfg.seed);
    json j;
    j["function"] = {{"name", family_name(cfg.function.family)},
                     {"mode", mode_name(cfg.function.mode)},
                     {"dim", cfg.function.dim()},
                     {"randomize", cfg.function.randomize},
                     {"gamma_lapse", cfg.function.gamma_lapse}};
    j["runs"] = cfg.runs;
    j["trials_per_run"] = cfg.trials_per_run;
    j["seed"] = cfg.seed;
    j["test_set_size"] = cfg.test_set_size;
    j["session"] = config_to_json(s);
    return j;
}

inline void write_csv(std::ostream& os, const BatchReport& rep) {
    os << "run_id,trial,rmse,brier,fisher_energy,converged\n";
    os.precision(17);
    for (const RunResult& r : rep.runs)
        for (std::size_t t = 0; t < r.series.rmse.size(); ++t) {
            os << r.run_index << ',' << (t + 1) << ',' << r.series.rmse[t] << ',';
            if (t < r.series.brier.size()) os << r.series.brier[t];
            os << ',' << r.fisher_energy[t] << ',' << (r.converged[t] ? 1 : 0) << '\n';
        }
}

inline json batch_summary(const BenchmarkConfig& cfg, const BatchReport& rep) {
    json j;
    j["config"] = bench_config_to_json(cfg);
    json runs = json::array();
    for (const RunResult& r : rep.runs) {
        json e = {{"run_id", r.run_index},
                  {"seed", r.seed},
                  {"trials", r.series.rmse.size()},
                  {"auc_rmse", r.series.auc_rmse},
                  {"auc_brier", r.series.auc_brier},
                  {"convergence_trial", r.series.convergence_trial ? json(*r.series.convergence_trial) : json(nullptr)}};
        if (r.error) e["error"] = *r.error;
        runs.push_back(std::move(e));
    }
    j["runs"] = std::move(runs);
    j["aggregate"] = {{"auc_rmse", {{"mean", rep.auc_rmse.mean}, {"standard_error", rep.auc_rmse.standard_error}}},
                      {"auc_brier", {{"mean", rep.auc_brier.mean}, {"standard_error", rep.auc_brier.standard_error}}}};
    return j;
}

}  // namespace nest
