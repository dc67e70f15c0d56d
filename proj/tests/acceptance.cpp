#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "nest/bench.hpp"

using namespace nest;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int worker_threads() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(got), std::abs(want)); }

struct Probe {
    double prob;
    std::vector<bool> active;
};

Probe probe(const NetworkState& net, const Vector& x, const PsychScaleConfig& scale) {
    const ForwardTrace tr = forward_trace(net, x, scale);
    Probe p{tr.out.prob, {}};
    for (std::size_t l = 0; l + 1 < tr.preacts.size(); ++l)
        for (Eigen::Index i = 0; i < tr.preacts[l].size(); ++i) p.active.push_back(tr.preacts[l][i] > 0.0);
    return p;
}

// Central difference along a one-parameter family; the step shrinks while
// the stencil straddles a ReLU kink, since the function is not smooth there.
double central_difference(const std::function<Probe(double)>& at) {
    const std::vector<bool> here = at(0.0).active;
    double h = 1e-4;
    for (;;) {
        const Probe p = at(h), m = at(-h);
        if ((p.active == here && m.active == here) || h <= 1e-7) return (p.prob - m.prob) / (2 * h);
        h /= 10.0;
    }
}

Outcome gradients() {
    const PsychScaleConfig scale{};
    std::mt19937_64 gen(2024);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    int checked = 0;
    for (int k : {1, 2, 4, 6}) {
        for (int pair = 0; pair < 50; ++pair) {
            const NetworkState net = init_network(k, gen());
            Vector x(k);
            for (int d = 0; d < k; ++d) x[d] = nd(gen);

            const Vector gx = input_gradient(net, x, scale);
            for (int d = 0; d < k; ++d) {
                if (std::abs(gx[d]) <= 1e-6) continue;
                const double fd = central_difference([&](double s) {
                    Vector xs = x;
                    xs[d] += s;
                    return probe(net, xs, scale);
                });
                worst = std::max(worst, rel_err(gx[d], fd));
                ++checked;
            }

            const Vector gp = param_gradient(net, x, scale);
            const Vector theta = net.flatten();
            std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
            for (int c = 0; c < 40; ++c) {
                const Eigen::Index j = pick(gen);
                if (std::abs(gp[j]) <= 1e-6) continue;
                const double fd = central_difference([&](double s) {
                    Vector ts = theta;
                    ts[j] += s;
                    NetworkState ns = net;
                    ns.unflatten(ts);
                    return probe(ns, x, scale);
                });
                worst = std::max(worst, rel_err(gp[j], fd));
                ++checked;
            }
        }
    }
    return {worst < 1e-4, fmt("max relative error %.3g over %d components", worst, checked)};
}

Outcome ntk_interpolation() {
    double worst = 0.0;
    for (int r = 0; r < 20; ++r) {
        BenchmarkConfig bc;
        bc.function.family = Family::Novel2D;
        bc.seed = 0x17e0 + static_cast<std::uint64_t>(r);
        const std::uint64_t seed = run_seed(bc.seed, 0);
        const SyntheticFunction fn = make_function(bc.function, seed);
        SessionState s = new_session(session_config_for(bc, fn, seed));
        SplitMix64 obs(derive_seed(seed, {0x0b5}));
        for (int t = 0; t < 30; ++t) {
            const Vector x = *s.pending_query;
            s = record_response(s, x, sample_response(fn, x, obs));
        }
        const Vector x_new = *s.pending_query;
        std::vector<Vector> at;
        for (const TrialRecord& rec : s.dataset.records) at.push_back(rec.stimulus);
        at.push_back(x_new);
        for (int y : {0, 1}) {
            const Vector pred = ntk_lookahead_predict(s.net, s.dataset, x_new, y, at, s.config.scale, 1e-6);
            for (std::size_t i = 0; i < at.size(); ++i) {
                const double label = i < s.dataset.size() ? s.dataset.records[i].response : y;
                worst = std::max(worst, std::abs(pred[static_cast<Eigen::Index>(i)] - label));
            }
        }
    }
    return {worst < 1e-4, fmt("max |prediction - label| %.3g over 20 sessions", worst)};
}

std::vector<double> brute_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0.0, equal = 0.0;
        for (double w : v) {
            less += w < v[i];
            equal += w == v[i];
        }
        r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
}

double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::vector<double> a = brute_ranks(x), b = brute_ranks(y);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Outcome metric_oracles() {
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u;
    std::uniform_int_distribution<int> len(3, 25), level(0, 4);
    double worst[4] = {0, 0, 0, 0};
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = static_cast<std::size_t>(len(gen));
        std::vector<double> a(n), b(n), sd(n), tx(n), ty(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = u(gen);
            b[i] = u(gen);
            sd[i] = 0.01 + 0.3 * u(gen);
            tx[i] = level(gen);
            ty[i] = inst % 2 ? level(gen) : u(gen);
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
        worst[0] = std::max(worst[0], std::abs(rmse(a, b) - std::sqrt(ss / static_cast<double>(n))));

        const double mu = 0.75;
        double bs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 0.5 * std::erfc((mu - a[i]) / (sd[i] * std::sqrt(2.0)));
            const double o = b[i] >= mu ? 1.0 : 0.0;
            bs += (p - o) * (p - o);
        }
        worst[1] = std::max(worst[1], std::abs(brier(a, sd, b, mu) - bs / static_cast<double>(n)));

        double total = 0.0;
        for (double v : a) total += v;
        worst[2] = std::max(worst[2], std::abs(auc(a) - (total - 0.5 * (a.front() + a.back()))));

        worst[3] = std::max(worst[3], std::abs(spearman(tx, ty) - brute_spearman(tx, ty)));
    }
    const bool ok = std::all_of(std::begin(worst), std::end(worst), [](double w) { return w <= 1e-12; });
    return {ok, fmt("max deviation rmse %.2g brier %.2g auc %.2g spearman %.2g", worst[0], worst[1], worst[2], worst[3])};
}

BenchmarkConfig nv2d(int runs, int trials) {
    BenchmarkConfig c;
    c.function.family = Family::Novel2D;
    c.runs = runs;
    c.trials_per_run = trials;
    c.seed = 0xacc;
    c.compute_brier = false;
    c.threads = worker_threads();
    return c;
}

double mean_auc(const BatchReport& rep) { return rep.auc_rmse.mean; }

struct Nv2dRuns {
    BatchReport full, random, grid32, grid4;
};

Outcome superiority(const Nv2dRuns& r) {
    const double f = mean_auc(r.full), g = mean_auc(r.random);
    return {f <= 0.85 * g, fmt("Full %.2f vs Random %.2f (ratio %.3f)", f, g, f / g)};
}

Outcome error_decrease(const BatchReport& full) {
    int good = 0;
    for (const RunResult& run : full.runs) {
        const auto& e = run.series.rmse;
        if (e.size() < 20) continue;
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < 10; ++i) {
            first += e[i];
            last += e[e.size() - 10 + i];
        }
        good += last < first;
    }
    return {good >= 18, fmt("%d of %zu runs", good, full.runs.size())};
}

Outcome snapping(const Nv2dRuns& r) {
    const double c = mean_auc(r.full), g32 = mean_auc(r.grid32), g4 = mean_auc(r.grid4);
    const bool ok = std::abs(g32 - c) <= 0.15 * c && g4 >= 2.0 * c;
    return {ok, fmt("continuous %.2f, 32 levels %.2f (%+.1f%%), 4 levels %.2f (x%.2f)", c, g32, 100.0 * (g32 - c) / c, g4, g4 / c)};
}

Outcome fisher_spearman() {
    BenchmarkConfig c;
    c.function.family = Family::Wei2D;
    c.runs = 10;
    c.trials_per_run = 200;
    c.seed = 0xacc2;
    c.compute_brier = false;
    c.threads = worker_threads();
    const BatchReport rep = run_batch(c);
    std::vector<double> fisher, err;
    for (int t = 0; t < c.trials_per_run; ++t) {
        double f = 0.0, e = 0.0;
        bool defined = true;
        for (const RunResult& run : rep.runs) {
            if (static_cast<int>(run.window_mean.size()) <= t || !std::isfinite(run.window_mean[static_cast<std::size_t>(t)])) {
                defined = false;
                break;
            }
            f += run.window_mean[static_cast<std::size_t>(t)];
            e += run.series.rmse[static_cast<std::size_t>(t)];
        }
        if (!defined) continue;
        fisher.push_back(f);
        err.push_back(e);
    }
    const double rho = fisher.size() > 2 ? spearman(fisher, err) : 0.0;
    return {rho >= 0.7, fmt("Spearman %.3f over %zu trials", rho, fisher.size())};
}

Outcome random_observer() {
    BenchmarkConfig c;
    c.function.family = Family::Random;
    c.function.dims = 2;
    c.runs = 20;
    c.trials_per_run = 150;
    c.seed = 0xacc3;
    c.threads = worker_threads();
    const CalibrationReport rep = fisher_calibration(c, c.trials_per_run);
    const double ratio = rep.level.mean / 9e-4;
    return {ratio >= 0.2 && ratio <= 5.0, fmt("20-run mean %.3g (x%.3f of 9e-4)", rep.level.mean, ratio)};
}

Outcome round_trip() {
    BenchmarkConfig bc = nv2d(1, 40);
    const std::uint64_t seed = run_seed(bc.seed, 3);
    const SyntheticFunction fn = make_function(bc.function, seed);
    SessionState s = new_session(session_config_for(bc, fn, seed));
    SplitMix64 obs(11);
    for (int t = 0; t < 20; ++t) s = record_response(s, *s.pending_query, sample_response(fn, *s.pending_query, obs));
    SessionState copy = import_text(export_text(s));
    int same = 0;
    const int remaining = 20;
    for (int t = 0; t < remaining; ++t) {
        const Vector a = *s.pending_query, b = *copy.pending_query;
        same += a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
        const int y = sample_response(fn, a, obs);
        s = record_response(s, a, y);
        copy = record_response(copy, b, y);
    }
    return {same == remaining, fmt("%d of %d remaining queries bit-identical", same, remaining)};
}

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
}

}  // namespace

int main() {
    report("gradient correctness", gradients);
    report("ntk interpolation", ntk_interpolation);
    report("metric oracles", metric_oracles);
    report("export/import round trip", round_trip);

    Nv2dRuns nv;
    {
        BenchmarkConfig c = nv2d(20, 150);
        nv.full = run_batch(c);
        c.acq.enabled = ComponentSet::none();
        nv.random = run_batch(c);
        c = nv2d(20, 150);
        c.grid_levels = 32;
        nv.grid32 = run_batch(c);
        c.grid_levels = 4;
        nv.grid4 = run_batch(c);
    }
    report("superiority over random", [&] { return superiority(nv); });
    report("error decrease", [&] { return error_decrease(nv.full); });
    report("discrete snapping", [&] { return snapping(nv); });
    report("fisher/rmse spearman", fisher_spearman);
    report("random observer baseline", random_observer);
    return failures == 0 ? 0 : 1;
}
