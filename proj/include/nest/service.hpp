#pragma once

// HTTP/JSON front end for live sessions. SessionStore holds the sessions and
// can be driven directly; Service binds it to routes.


#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nest/errors.hpp"
#include "nest/session.hpp"

// After Eigen: resolv.h defines a _res macro that collides with Eigen internals.
#include <httplib.h>
#include <json.hpp>

namespace nest {

inline constexpr double kStimulusMatchTolerance = 1e-9;
inline constexpr std::size_t kStatusFisherTail = 50;

struct SliceRequest {
    int dim_x = 0;
    int dim_y = 1;
    std::vector<double> fixed;  // values of the remaining dimensions, in index order
    int resolution = 64;
    bool include_std = false;
};

inline json optional_number(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
}

inline json status_json(const SessionState& s) {
    const ConvergenceStatus cs = convergence_check(s);
    const auto counts = s.class_counts();
    const std::size_t tail = std::min(kStatusFisherTail, s.fisher_history.size());
    json j;
    j["trial_count"] = s.trial_count;
    j["converged"] = s.converged;
    j["snr"] = optional_number(cs.snr);
    j["snr_infinite"] = cs.snr && std::isinf(*cs.snr);
    j["window_mean"] = optional_number(cs.window_mean);
    j["snr_cutoff"] = s.config.convergence.snr_cutoff;
    j["baseline_level"] = s.config.convergence.baseline_for(s.config.dim);
    j["fisher_history_tail"] = std::vector<double>(s.fisher_history.end() - static_cast<std::ptrdiff_t>(tail), s.fisher_history.end());
    j["class_counts"] = {counts[0], counts[1]};
    return j;
}

inline json next_json(const SessionState& s) {
    json j;
    j["stimulus"] = s.pending_query ? vector_to_json(*s.pending_query) : json(nullptr);
    j["trial_index"] = s.trial_count + 1;
    j["was_random_exploration"] = s.pending_random;
    return j;
}

inline json slice_json(const SessionState& s, const SliceRequest& req) {
    const SessionConfig& c = s.config;
    const int k = c.dim;
    if (k < 2) fail(ErrorKind::InvalidArgument, "slices need at least two dimensions");
    if (req.dim_x < 0 || req.dim_x >= k || req.dim_y < 0 || req.dim_y >= k || req.dim_x == req.dim_y)
        fail(ErrorKind::InvalidArgument, "dim_x and dim_y must be distinct dimension indices");
    if (req.resolution < 2 || req.resolution > 512) fail(ErrorKind::InvalidArgument, "resolution must lie in [2, 512]");
    Vector base = 0.5 * (c.bounds.low + c.bounds.high);
    if (!req.fixed.empty()) {
        if (static_cast<int>(req.fixed.size()) != k - 2) fail(ErrorKind::InvalidArgument, "fixed needs one value per remaining dimension");
        std::size_t f = 0;
        for (int d = 0; d < k; ++d) {
            if (d == req.dim_x || d == req.dim_y) continue;
            const double v = req.fixed[f++];
            if (!(v >= c.bounds.low[d] && v <= c.bounds.high[d])) fail(ErrorKind::InvalidArgument, "fixed value outside the bounds");
            base[d] = v;
        }
    }
    const int r = req.resolution;
    std::vector<double> xs(static_cast<std::size_t>(r)), ys(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const double t = static_cast<double>(i) / (r - 1);
        xs[static_cast<std::size_t>(i)] = c.bounds.low[req.dim_x] + t * (c.bounds.high[req.dim_x] - c.bounds.low[req.dim_x]);
        ys[static_cast<std::size_t>(i)] = c.bounds.low[req.dim_y] + t * (c.bounds.high[req.dim_y] - c.bounds.low[req.dim_y]);
    }
    Matrix z(k, static_cast<Eigen::Index>(r) * r);
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < r; ++i) {
            Vector x = base;
            x[req.dim_x] = xs[static_cast<std::size_t>(i)];
            x[req.dim_y] = ys[static_cast<std::size_t>(j)];
            z.col(static_cast<Eigen::Index>(j) * r + i) = s.dataset.normalize(x);
        }
    const Matrix hidden = last_hidden_batch(s.net, z);
    const Vector raw = raw_from_last_hidden(s.net, hidden);
    Matrix masks;
    if (req.include_std)
        masks = sample_last_layer_masks(static_cast<int>(hidden.rows()), c.acq.mc_samples, c.acq.dropout_p, derive_seed(c.seed, {0x511ce}));
    json prob = json::array(), stdv = json::array();
    for (int j = 0; j < r; ++j) {
        json row = json::array(), srow = json::array();
        for (int i = 0; i < r; ++i) {
            const Eigen::Index col = static_cast<Eigen::Index>(j) * r + i;
            row.push_back(squash(raw[col], c.scale).prob);
            if (req.include_std) srow.push_back(std::sqrt(mc_dropout_from_hidden(s.net, hidden.col(col), c.scale, masks).variance));
        }
        prob.push_back(std::move(row));
        if (req.include_std) stdv.push_back(std::move(srow));
    }
    json trials = json::array();
    for (const auto& rec : s.dataset.records) trials.push_back({{"stimulus", vector_to_json(rec.stimulus)}, {"response", rec.response}});
    json j;
    j["dim_x"] = req.dim_x;
    j["dim_y"] = req.dim_y;
    j["resolution"] = r;
    j["fixed_point"] = vector_to_json(base);
    j["x_values"] = xs;
    j["y_values"] = ys;
    j["prob"] = std::move(prob);
    if (req.include_std) j["std"] = std::move(stdv);
    j["trials"] = std::move(trials);
    return j;
}

/// Thread-safe registry of live sessions with one JSON document per session
/// in `data_dir` (rewritten atomically after every change).
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path data_dir = {}) : data_dir_(std::move(data_dir)) {
        if (!data_dir_.empty()) {
            std::filesystem::create_directories(data_dir_);
            load_existing();
        }
    }

    std::string create(const json& config_doc) {
        const SessionConfig cfg = config_from_json(config_doc);
        auto entry = std::make_shared<Entry>();
        entry->created_at = timestamp();
        entry->state = std::make_shared<const SessionState>(new_session(cfg));
        std::string id;
        {
            std::lock_guard lock(map_mutex_);
            do id = make_id();
            while (sessions_.count(id));
            sessions_[id] = entry;
        }
        persist(id, *entry, *entry->state);
        return id;
    }

    json next(const std::string& id) {
        auto s = snapshot(id);
        json j = next_json(*s);
        j["id"] = id;
        return j;
    }

    json status(const std::string& id) {
        auto s = snapshot(id);
        json j = status_json(*s);
        j["id"] = id;
        return j;
    }

    json slice(const std::string& id, const SliceRequest& req) { return slice_json(*snapshot(id), req); }

    json export_doc(const std::string& id) { return export_state(*snapshot(id)); }

    /// Applies one response. Posts to the same session serialize; readers keep
    /// seeing the previous committed state until the new one is ready.
    json respond(const std::string& id, const json& body) {
        auto entry = find(id);
        if (!body.is_object() || !body.contains("stimulus") || !body.contains("response"))
            fail(ErrorKind::InvalidArgument, "body needs 'stimulus' and 'response'");
        Vector x;
        int y = 0;
        try {
            x = vector_from_json(body.at("stimulus"));
            y = body.at("response").get<int>();
        } catch (const json::exception&) {
            fail(ErrorKind::InvalidArgument, "malformed response body");
        } catch (const Error&) {
            fail(ErrorKind::InvalidArgument, "malformed stimulus");
        }
        std::lock_guard write(entry->write_mutex);
        if (entry->finished) fail(ErrorKind::NotFound, "unknown session '" + id + "'");
        const auto current = load(*entry);
        if (!current->pending_query || x.size() != current->pending_query->size() ||
            (x - *current->pending_query).cwiseAbs().maxCoeff() > kStimulusMatchTolerance)
            fail(ErrorKind::Conflict, "stimulus does not match the pending query; fetch /next again");
        auto next = std::make_shared<const SessionState>(record_response(*current, *current->pending_query, y));
        persist(id, *entry, *next);
        {
            std::lock_guard lock(entry->state_mutex);
            entry->state = next;
        }
        json j = status_json(*next);
        j["id"] = id;
        return j;
    }

    json finish(const std::string& id) {
        std::shared_ptr<Entry> entry;
        {
            std::lock_guard lock(map_mutex_);
            auto it = sessions_.find(id);
            if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown session '" + id + "'");
            entry = it->second;
            sessions_.erase(it);
        }
        std::lock_guard write(entry->write_mutex);
        entry->finished = true;
        const auto s = load(*entry);
        json doc = export_state(*s);
        if (!data_dir_.empty()) {
            std::error_code ec;
            std::filesystem::rename(path_for(id), data_dir_ / (id + ".final.json"), ec);
        }
        return doc;
    }

    std::vector<std::string> ids() const {
        std::lock_guard lock(map_mutex_);
        std::vector<std::string> out;
        for (const auto& [id, e] : sessions_) out.push_back(id);
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Registers an exported document as a live session under a new id.
    std::string import_doc(const json& doc) {
        auto entry = std::make_shared<Entry>();
        entry->created_at = timestamp();
        entry->state = std::make_shared<const SessionState>(import_state(doc));
        std::string id;
        {
            std::lock_guard lock(map_mutex_);
            do id = make_id();
            while (sessions_.count(id));
            sessions_[id] = entry;
        }
        persist(id, *entry, *entry->state);
        return id;
    }

private:
    struct Entry {
        std::mutex write_mutex;
        std::mutex state_mutex;
        std::shared_ptr<const SessionState> state;
        std::string created_at;
        bool finished = false;
    };

    static std::shared_ptr<const SessionState> load(Entry& e) {
        std::lock_guard lock(e.state_mutex);
        return e.state;
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lock(map_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown session '" + id + "'");
        return it->second;
    }

    std::shared_ptr<const SessionState> snapshot(const std::string& id) { return load(*find(id)); }

    std::string make_id() {
        static thread_local std::mt19937_64 gen(std::random_device{}() ^
                                                static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
        std::ostringstream os;
        os << std::hex << (gen() ^ counter_.fetch_add(1));
        return os.str();
    }

    static std::string timestamp() {
        const std::time_t t = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        return buf;
    }

    std::filesystem::path path_for(const std::string& id) const { return data_dir_ / (id + ".json"); }

    void persist(const std::string& id, const Entry& e, const SessionState& s) const {
        if (data_dir_.empty()) return;
        json doc = {{"id", id}, {"created_at", e.created_at}, {"session", export_state(s)}};
        const auto tmp = data_dir_ / (id + ".json.tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << doc.dump();
            if (!out) fail(ErrorKind::InvalidArgument, "cannot write session file " + tmp.string());
        }
        std::filesystem::rename(tmp, path_for(id));
    }

    void load_existing() {
        for (const auto& de : std::filesystem::directory_iterator(data_dir_)) {
            const std::string name = de.path().filename().string();
            if (de.path().extension() != ".json" || name.ends_with(".final.json")) continue;
            try {
                std::ifstream in(de.path());
                const json doc = json::parse(in);
                auto entry = std::make_shared<Entry>();
                entry->created_at = doc.value("created_at", std::string());
                entry->state = std::make_shared<const SessionState>(import_state(doc.at("session")));
                sessions_[doc.at("id").get<std::string>()] = entry;
            } catch (const std::exception&) {
                // unreadable documents are left on disk untouched
            }
        }
    }

    std::filesystem::path data_dir_;
    mutable std::mutex map_mutex_;
    std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
    std::atomic<std::uint64_t> counter_{0};
};

inline int http_status_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Conflict: return 409;
        case ErrorKind::Config:
        case ErrorKind::Parse:
        case ErrorKind::InvalidArgument:
        case ErrorKind::Shape:
        case ErrorKind::Bounds:
        case ErrorKind::InvalidBounds:
        case ErrorKind::InvalidDimension:
        case ErrorKind::Domain: return 400;
        default: return 500;
    }
}

inline json error_json(const Error& e) {
    json fields = json::array();
    for (const auto& [f, m] : e.fields()) fields.push_back({{"field", f}, {"message", m}});
    return {{"error", to_string(e.kind())}, {"message", e.what()}, {"fields", fields}};
}

/// Routes:
///   POST /sessions                  config document -> {id}
///   GET  /sessions                  -> {ids}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/responses   {stimulus, response}
///   GET  /sessions/{id}/status
///   GET  /sessions/{id}/slice       ?dim_x&dim_y&fixed=a,b&resolution&std=1
///   GET  /sessions/{id}/export
///   POST /sessions/{id}/finish
class Service {
public:
    explicit Service(SessionStore& store) : store_(store) {
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                     {"Access-Control-Allow-Headers", "Content-Type"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const std::string id = store_.create(parse_body(req.body));
                res.status = 201;
                return json{{"id", id}};
            });
        });
        server_.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
            handle(res, [&] { return json{{"ids", store_.ids()}}; });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.next(req.matches[1]); });
        });
        server_.Post(R"(/sessions/([0-9a-f]+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.respond(req.matches[1], parse_body(req.body)); });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.status(req.matches[1]); });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.slice(req.matches[1], parse_slice(req)); });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.export_doc(req.matches[1]); });
        });
        server_.Post(R"(/sessions/([0-9a-f]+)/finish)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.finish(req.matches[1]); });
        });
    }

    bool mount_static(const std::string& dir) { return server_.set_mount_point("/", dir); }

    /// Binds and serves until stop(); returns false when the port is unavailable.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /// Binds to a free port and returns it (serve with listen_after_bind()).
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    void stop() { server_.stop(); }

private:
    static json parse_body(const std::string& body) {
        try {
            return json::parse(body);
        } catch (const json::exception& e) {
            fail(ErrorKind::Parse, std::string("request body is not valid JSON: ") + e.what());
        }
    }

    static SliceRequest parse_slice(const httplib::Request& req) {
        SliceRequest s;
        auto int_param = [&](const char* name, int& out) {
            if (!req.has_param(name)) return;
            try {
                out = std::stoi(req.get_param_value(name));
            } catch (const std::exception&) {
                fail(ErrorKind::InvalidArgument, std::string("query parameter '") + name + "' must be an integer");
            }
        };
        int_param("dim_x", s.dim_x);
        int_param("dim_y", s.dim_y);
        int_param("resolution", s.resolution);
        if (req.has_param("std")) s.include_std = req.get_param_value("std") == "1" || req.get_param_value("std") == "true";
        if (req.has_param("fixed")) {
            std::stringstream ss(req.get_param_value("fixed"));
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                try {
                    s.fixed.push_back(std::stod(tok));
                } catch (const std::exception&) {
                    fail(ErrorKind::InvalidArgument, "fixed must be a comma-separated list of numbers");
                }
            }
        }
        return s;
    }

    template <typename F>
    static void handle(httplib::Response& res, F&& fn) {
        try {
            json out = fn();
            res.set_content(out.dump(), "application/json");
        } catch (const Error& e) {
            res.status = http_status_for(e.kind());
            res.set_content(error_json(e).dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"error", "internal"}, {"message", e.what()}}.dump(), "application/json");
        }
    }

    SessionStore& store_;
    httplib::Server server_;
};

}  // namespace nest
