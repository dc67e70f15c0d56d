// nest: simulation harness and experiment server.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nest/bench.hpp"
#include "nest/service.hpp"

namespace {

using nest::json;

struct BenchFlags {
    std::string function = "nv2d";
    std::string mode = "detection";
    int dims = 0;
    int trials = 150;
    int runs = 1;
    std::uint64_t seed = 0;
    std::string weights;
    std::string ablation = "grad,prox,unc,la";
    int grid_levels = 0;
    bool randomize = false;
    bool no_brier = false;
    int threads = 1;
    int batch_size = -1;
    std::string out;
};

void add_bench_flags(CLI::App* app, BenchFlags& f) {
    app->add_option("--function", f.function, "wei1d|wei2d|wei3d|wei4d|sin2d|max2d|dn2d|nv2d|hart6|ps8d|sphere|random");
    app->add_option("--mode", f.mode, "detection|discrimination");
    app->add_option("--dims", f.dims, "dimension for sphere and random");
    app->add_option("--trials", f.trials, "trials per run");
    app->add_option("--runs", f.runs, "independent runs");
    app->add_option("--seed", f.seed, "batch seed");
    app->add_option("--weights", f.weights, "acquisition exponents a,b,c,d");
    app->add_option("--ablation", f.ablation, "enabled components, or 'random'");
    app->add_option("--grid-levels", f.grid_levels, "snap queries to N levels per dimension (0: continuous)");
    app->add_flag("--randomize", f.randomize, "draw function parameters per run");
    app->add_flag("--no-brier", f.no_brier, "skip the Brier score");
    app->add_option("--threads", f.threads, "worker threads for runs");
    app->add_option("--batch-size", f.batch_size, "records per Adam step (0: full dataset)");
}

nest::AcquisitionWeights parse_weights(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            v.push_back(std::stod(tok));
        } catch (const std::exception&) {
            nest::fail(nest::ErrorKind::Config, "bad weight '" + tok + "'");
        }
    }
    if (v.size() != 4) nest::fail(nest::ErrorKind::Config, "weights need four values a,b,c,d");
    return {v[0], v[1], v[2], v[3]};
}

nest::BenchmarkConfig to_config(const BenchFlags& f) {
    nest::BenchmarkConfig c;
    c.function.family = nest::parse_family(f.function);
    c.function.mode = nest::parse_mode(f.mode);
    c.function.dims = f.dims;
    c.function.randomize = f.randomize;
    c.trials_per_run = f.trials;
    c.runs = f.runs;
    c.seed = f.seed;
    if (!f.weights.empty()) c.acq.weights = parse_weights(f.weights);
    c.acq.enabled = nest::ComponentSet::parse(f.ablation);
    if (f.grid_levels > 0) c.grid_levels = f.grid_levels;
    c.compute_brier = !f.no_brier;
    c.threads = f.threads;
    if (f.batch_size >= 0) c.train.batch_size = f.batch_size;
    c.out = f.out;
    c.validate();
    return c;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) nest::fail(nest::ErrorKind::Io, "cannot write " + path);
    return os;
}

std::string with_extension(const std::string& path, const std::string& ext) {
    std::filesystem::path p(path);
    p.replace_extension(ext);
    return p.string();
}

int cmd_simulate(const BenchFlags& f) {
    const nest::BenchmarkConfig cfg = to_config(f);
    const nest::BatchReport rep = nest::run_batch(cfg);
    const json summary = nest::batch_summary(cfg, rep);
    if (cfg.out.empty()) {
        std::cout << summary.dump(2) << "\n";
        return 0;
    }
    auto csv = open_out(with_extension(cfg.out, ".csv"));
    nest::write_csv(csv, rep);
    open_out(with_extension(cfg.out, ".json")) << summary.dump(2) << "\n";
    std::cout << "auc_rmse " << rep.auc_rmse.mean << " +- " << rep.auc_rmse.standard_error << "\n";
    return 0;
}

std::vector<nest::AcquisitionWeights> read_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) nest::fail(nest::ErrorKind::Io, "cannot read " + path);
    std::vector<nest::AcquisitionWeights> grid;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        grid.push_back(parse_weights(line));
    }
    if (grid.empty()) nest::fail(nest::ErrorKind::Config, "grid file has no weight tuples");
    return grid;
}

int cmd_weight_search(const BenchFlags& f, const std::string& grid_file) {
    const nest::BenchmarkConfig cfg = to_config(f);
    const auto ranked = nest::weight_search(cfg, read_grid(grid_file));
    json rows = json::array();
    for (const auto& r : ranked)
        rows.push_back({{"weights", {r.weights.a, r.weights.b, r.weights.c, r.weights.d}},
                        {"auc_rmse", r.auc_rmse.mean},
                        {"standard_error", r.auc_rmse.standard_error}});
    const json doc = {{"config", nest::bench_config_to_json(cfg)}, {"ranking", rows}};
    if (cfg.out.empty()) std::cout << doc.dump(2) << "\n";
    else open_out(cfg.out) << doc.dump(2) << "\n";
    return 0;
}

// Runs the simulated observer for `trial` responses, then scores a grid over
// the first two dimensions (others held at the centre of the box).
int cmd_components(const BenchFlags& f, int trial, int resolution) {
    nest::BenchmarkConfig cfg = to_config(f);
    const std::uint64_t seed = nest::run_seed(cfg.seed, 0);
    const nest::SyntheticFunction fn = nest::make_function(cfg.function, seed);
    nest::SessionState s = nest::new_session(nest::session_config_for(cfg, fn, seed));
    nest::SplitMix64 observer(nest::derive_seed(seed, {0x0b5}));
    for (int t = 0; t < trial; ++t) {
        const nest::Vector x = *s.pending_query;
        s = nest::record_response(s, x, nest::sample_response(fn, x, observer));
    }
    const nest::Bounds& b = s.config.bounds;
    const int k = s.config.dim;
    std::vector<nest::Vector> pts;
    const int ny = k > 1 ? resolution : 1;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < resolution; ++i) {
            nest::Vector p = 0.5 * (b.low + b.high);
            p[0] = b.low[0] + (b.high[0] - b.low[0]) * i / (resolution - 1);
            if (k > 1) p[1] = b.low[1] + (b.high[1] - b.low[1]) * j / (resolution - 1);
            pts.push_back(p);
        }
    const auto rows = nest::component_map(s, pts, s.trial_count + 1);

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!cfg.out.empty()) {
        file = open_out(cfg.out);
        os = &file;
    }
    os->precision(17);
    for (int d = 0; d < k; ++d) *os << 'x' << d << ',';
    *os << "grad,prox,unc,la,combined,grad_norm,density,std,lookahead\n";
    for (const auto& r : rows) {
        for (int d = 0; d < k; ++d) *os << r.x[d] << ',';
        const auto& c = r.score.components;
        *os << c.grad << ',' << c.prox << ',' << c.unc << ',' << c.la << ',' << r.score.combined << ','
            << r.raw.grad_norm << ',' << r.raw.density << ',' << r.raw.std << ',' << r.raw.lookahead << '\n';
    }
    return 0;
}

// Random observer vs the chosen function: mean windowed Fisher difference per
// trial and the resulting SNR curve.
int cmd_fisher_calibration(const BenchFlags& f, int tail) {
    nest::BenchmarkConfig cfg = to_config(f);
    cfg.compute_brier = false;
    nest::BenchmarkConfig rnd = cfg;
    rnd.function.family = nest::Family::Random;
    rnd.function.dims = cfg.function.dim();
    const nest::CalibrationReport cal = nest::fisher_calibration(rnd, tail);
    const nest::BatchReport rep = nest::run_batch(cfg);

    const std::size_t n = static_cast<std::size_t>(cfg.trials_per_run);
    std::vector<double> curve(n, 0.0), rmse(n, 0.0);
    std::vector<int> counts(n, 0);
    for (const auto& r : rep.runs)
        for (std::size_t t = 0; t < r.window_mean.size() && t < n; ++t) {
            rmse[t] += r.series.rmse[t] / static_cast<double>(rep.runs.size());
            if (std::isfinite(r.window_mean[t])) {
                curve[t] += r.window_mean[t];
                ++counts[t];
            }
        }
    json trials = json::array();
    std::vector<double> wm, rm;
    for (std::size_t t = 0; t < n; ++t) {
        json row = {{"trial", t + 1}, {"rmse", rmse[t]}};
        if (counts[t] > 0) {
            const double m = curve[t] / counts[t];
            row["window_mean"] = m;
            row["snr"] = cal.level.mean / m;
            wm.push_back(m);
            rm.push_back(rmse[t]);
        }
        trials.push_back(std::move(row));
    }
    const json doc = {{"dim", cal.dim},
                      {"table_baseline", cal.baseline_level},
                      {"random_observer", {{"mean", cal.level.mean}, {"standard_error", cal.level.standard_error}, {"runs", cal.run_level}}},
                      {"spearman_window_rmse", wm.size() > 1 ? json(nest::spearman(wm, rm)) : json(nullptr)},
                      {"trials", trials}};
    if (cfg.out.empty()) std::cout << doc.dump(2) << "\n";
    else open_out(cfg.out) << doc.dump(2) << "\n";
    return 0;
}

nest::Service* g_service = nullptr;

int cmd_serve(int port, const std::string& host, const std::string& data_dir, const std::string& static_dir) {
    nest::SessionStore store(data_dir);
    nest::Service service(store);
    if (!static_dir.empty() && !service.mount_static(static_dir))
        nest::fail(nest::ErrorKind::Io, "cannot serve static files from " + static_dir);
    g_service = &service;
    std::signal(SIGINT, [](int) { g_service->stop(); });
    std::signal(SIGTERM, [](int) { g_service->stop(); });
    std::cerr << "listening on " << host << ":" << port << (data_dir.empty() ? "" : ", data in " + data_dir) << "\n";
    if (!service.listen(host, port)) nest::fail(nest::ErrorKind::Io, "cannot listen on port " + std::to_string(port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural active sampling for psychometric functions"};
    app.set_config("--config", "", "key = value file mirroring the flags; flags override it");
    app.require_subcommand(1);

    BenchFlags sim, ws, comp, cal;
    auto* simulate = app.add_subcommand("simulate", "Monte-Carlo learning curves");
    add_bench_flags(simulate, sim);
    simulate->add_option("--out", sim.out, "output stem: writes <stem>.csv and <stem>.json");

    std::string grid_file;
    auto* weight = app.add_subcommand("weight-search", "rank acquisition weight tuples by AUC of RMSE");
    add_bench_flags(weight, ws);
    weight->add_option("--grid-file", grid_file, "one a,b,c,d tuple per line")->required()->check(CLI::ExistingFile);
    weight->add_option("--out", ws.out, "JSON output path");

    int trial = 20, resolution = 64;
    auto* components = app.add_subcommand("components", "per-candidate acquisition components on a grid");
    add_bench_flags(components, comp);
    components->add_option("--trial", trial, "responses recorded before scoring");
    components->add_option("--resolution", resolution, "grid points per axis")->check(CLI::Range(2, 1024));
    components->add_option("--out", comp.out, "CSV output path");

    int tail = 150;
    auto* calibration = app.add_subcommand("fisher-calibration", "windowed Fisher energy against the random observer");
    add_bench_flags(calibration, cal);
    cal.runs = 5;
    calibration->add_option("--tail", tail, "trials averaged for the random-observer level");
    calibration->add_option("--out", cal.out, "JSON output path");

    int port = 8080;
    std::string host = "0.0.0.0", data_dir = "nest-data", static_dir;
    auto* serve = app.add_subcommand("serve", "HTTP/JSON experiment server");
    serve->add_option("--port", port, "listen port")->envname("NEST_PORT");
    serve->add_option("--host", host, "listen address");
    serve->add_option("--data-dir", data_dir, "session documents directory")->envname("NEST_DATA_DIR");
    serve->add_option("--static", static_dir, "directory served at /");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(sim);
        if (weight->parsed()) return cmd_weight_search(ws, grid_file);
        if (components->parsed()) {
            if (trial < 0) nest::fail(nest::ErrorKind::Config, "--trial must be >= 0");
            return cmd_components(comp, trial, resolution);
        }
        if (calibration->parsed()) return cmd_fisher_calibration(cal, tail);
        if (serve->parsed()) return cmd_serve(port, host, data_dir, static_dir);
    } catch (const nest::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
