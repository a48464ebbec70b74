#ifndef PLUMESHINE_SERVICE_HPP
#define PLUMESHINE_SERVICE_HPP

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "plumeshine/dispersion.hpp"
#include "plumeshine/dose_kernel.hpp"
#include "plumeshine/ensemble.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/nuclide_db.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

using json = nlohmann::json;

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t threads = 8;
    std::string db_path;                          ///< empty = built-in default
    std::map<std::string, std::string> models;    ///< family name -> model file
    KernelConfig kernel;

    static ServiceConfig from(const text::KeyValue& kv) {
        ServiceConfig c;
        c.host = kv.get_or("host", c.host);
        c.port = static_cast<int>(kv.get_u64_or("port", static_cast<std::uint64_t>(c.port)));
        c.threads = static_cast<std::size_t>(kv.get_u64_or("threads", c.threads));
        c.db_path = kv.get_or("db", "");
        for (const auto* family : {"forest", "boosted"}) {
            const std::string key = std::string("model.") + family;
            if (kv.has(key)) c.models[family] = kv.get(key);
        }
        c.kernel = KernelConfig::from(kv);
        if (c.threads < 1) throw ValidationError("threads must be >= 1");
        return c;
    }
};

/// A status code and JSON body. `timing` goes out as a Server-Timing header
/// so that bodies stay identical across identical requests.
struct HttpReply {
    int status = 200;
    std::string body;
    std::string timing;
};

namespace detail {

/// Request rejected with an HTTP status; raised while decoding requests.
struct HttpFailure {
    int status;
    std::string kind;
    std::string message;
};

inline HttpReply error_reply(int status, const std::string& kind, const std::string& message) {
    return HttpReply{status, json{{"error", {{"kind", kind}, {"message", message}}}}.dump(), ""};
}

inline void bad_request(const std::string& message) { throw HttpFailure{400, "SchemaError", message}; }

inline const json& field(const json& body, const char* name) {
    if (!body.contains(name)) bad_request(std::string("missing field '") + name + "'");
    return body.at(name);
}

inline double number_field(const json& body, const char* name) {
    const auto& v = field(body, name);
    if (!v.is_number()) bad_request(std::string("field '") + name + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad_request(std::string("field '") + name + "' must be finite");
    return d;
}

inline std::string string_field(const json& body, const char* name) {
    const auto& v = field(body, name);
    if (!v.is_string()) bad_request(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

inline void reject_unknown_fields(const json& body, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : body.items()) {
        if (!allowed.count(k)) bad_request("unknown field '" + k + "'");
    }
}

inline json parse_object(const std::string& raw) {
    json body;
    try {
        body = json::parse(raw);
    } catch (const json::parse_error& e) {
        bad_request(std::string("body is not valid JSON: ") + e.what());
    }
    if (!body.is_object()) bad_request("body must be a JSON object");
    return body;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

/// Request handlers over immutable database and model state. Every handler is
/// const and safe to call concurrently.
class Service {
  public:
    Service(NuclideDB db, std::map<std::string, Model> models, KernelConfig kernel = {})
        : db_(std::move(db)), models_(std::move(models)), kernel_(kernel) {
        kernel_.validate();
        for (const auto& [name, m] : models_) parse_family(name);
    }

    HttpReply nuclides() const { return {200, json{{"nuclides", db_.names()}}.dump(), ""}; }

    HttpReply stability_classes() const {
        json classes = json::array();
        for (const auto s : kAllStabilityClasses) classes.push_back(to_string(s));
        return {200, json{{"stability_classes", classes}}.dump(), ""};
    }

    HttpReply health() const {
        json loaded = json::object();
        for (const auto* family : {"forest", "boosted"}) loaded[family] = models_.count(family) > 0;
        return {200, json{{"status", "ok"}, {"models", loaded}}.dump(), ""};
    }

    HttpReply predict(const std::string& raw) const {
        return guarded([&] { return predict_impl(raw); });
    }

    HttpReply profile(const std::string& raw) const {
        return guarded([&] { return profile_impl(raw); });
    }

    /// Registers all endpoints on `server`.
    void install(httplib::Server& server) const {
        auto send = [](httplib::Response& res, const HttpReply& r) {
            res.status = r.status;
            if (!r.timing.empty()) res.set_header("Server-Timing", r.timing);
            res.set_content(r.body, "application/json");
        };
        server.Get("/nuclides", [this, send](const httplib::Request&, httplib::Response& res) { send(res, nuclides()); });
        server.Get("/stability-classes",
                   [this, send](const httplib::Request&, httplib::Response& res) { send(res, stability_classes()); });
        server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
        server.Post("/predict",
                    [this, send](const httplib::Request& req, httplib::Response& res) { send(res, predict(req.body)); });
        server.Post("/profile",
                    [this, send](const httplib::Request& req, httplib::Response& res) { send(res, profile(req.body)); });
    }

    const NuclideDB& db() const { return db_; }
    const KernelConfig& kernel() const { return kernel_; }

  private:
    struct Query {
        const NuclideRecord* nuclide;
        StabilityClass stability;
        double height;
        std::vector<std::string> models;
        bool include_reference;
    };

    template <typename Fn>
    HttpReply guarded(Fn&& fn) const {
        try {
            return fn();
        } catch (const detail::HttpFailure& f) {
            return detail::error_reply(f.status, f.kind, f.message);
        } catch (const QuadratureError& e) {
            return detail::error_reply(500, e.kind(), e.what());
        } catch (const DomainError& e) {
            return detail::error_reply(400, e.kind(), e.what());
        } catch (const ValidationError& e) {
            return detail::error_reply(400, e.kind(), e.what());
        } catch (const std::exception& e) {
            return detail::error_reply(500, "InternalError", e.what());
        }
    }

    Query decode_common(const json& body) const {
        Query q{};
        const auto name = detail::string_field(body, "radionuclide");
        try {
            q.stability = parse_stability(detail::string_field(body, "stability"));
        } catch (const ValidationError& e) {
            detail::bad_request(e.what());
        }
        q.height = detail::number_field(body, "release_height_m");
        if (!(q.height >= 0.0 && q.height <= 500.0)) detail::bad_request("release_height_m must lie in [0, 500]");
        if (body.contains("models")) {
            const auto& m = body.at("models");
            if (!m.is_array()) detail::bad_request("field 'models' must be an array");
            for (const auto& v : m) {
                if (!v.is_string() || (v != "forest" && v != "boosted")) {
                    detail::bad_request("models entries must be \"forest\" or \"boosted\"");
                }
                q.models.push_back(v.get<std::string>());
            }
        } else {
            for (const auto& [family, model] : models_) q.models.push_back(family);
        }
        q.include_reference = false;
        if (body.contains("include_reference")) {
            if (!body.at("include_reference").is_boolean()) detail::bad_request("include_reference must be a boolean");
            q.include_reference = body.at("include_reference").get<bool>();
        }
        q.nuclide = db_.find(name);
        if (!q.nuclide) throw detail::HttpFailure{404, "UnknownNuclide", "unknown radionuclide '" + name + "'"};
        for (const auto& family : q.models) {
            const auto it = models_.find(family);
            if (it == models_.end()) {
                throw detail::HttpFailure{503, "ModelNotLoaded", "model '" + family + "' is not loaded"};
            }
            const auto& names = it->second.pre.nuclides;
            if (!std::binary_search(names.begin(), names.end(), q.nuclide->name)) {
                throw detail::HttpFailure{404, "UnknownNuclide",
                                          "model '" + family + "' was not trained on " + q.nuclide->name};
            }
        }
        return q;
    }

    static void check_distance(double d) {
        if (!(d > 0.0)) detail::bad_request("distances must be positive");
    }

    double reference(const Query& q, double distance, double* error = nullptr) const {
        const auto r = dose_rate_detailed(db_, *q.nuclide, ReleaseSpec{1.0, 1.0, q.height, q.stability},
                                          Receptor{distance, 0.0, 1.0}, kernel_);
        if (error) *error = r.error_estimate;
        return r.dose;
    }

    HttpReply predict_impl(const std::string& raw) const {
        const auto body = detail::parse_object(raw);
        detail::reject_unknown_fields(body, {"radionuclide", "stability", "release_height_m", "distance_m", "models",
                                             "include_reference"});
        const double distance = detail::number_field(body, "distance_m");
        check_distance(distance);
        const auto q = decode_common(body);
        std::string timing;
        json out{{"radionuclide", q.nuclide->name},
                 {"stability", to_string(q.stability)},
                 {"release_height_m", q.height},
                 {"distance_m", distance}};
        std::optional<double> ref;
        if (q.include_reference) {
            const auto t0 = std::chrono::steady_clock::now();
            double err = 0.0;
            ref = reference(q, distance, &err);
            timing = "reference;dur=" + text::format_fixed(detail::elapsed_ms(t0), 3);
            out["reference"] = {{"dose_uSv_per_hr", *ref}, {"error_estimate_uSv_per_hr", err}};
        }
        json predictions = json::array();
        const Scenario s{q.nuclide->name, q.stability, q.height, distance};
        for (const auto& family : q.models) {
            const auto& m = models_.at(family);
            const auto t0 = std::chrono::steady_clock::now();
            const double dose = predict_dose(m, s);
            timing += (timing.empty() ? "" : ", ") + family + ";dur=" + text::format_fixed(detail::elapsed_ms(t0), 3);
            json p{{"model", family}, {"dose_uSv_per_hr", dose}, {"extrapolation", !m.pre.in_bounds(q.height, distance)}};
            if (ref) p["deviation_percent"] = 100.0 * (dose - *ref) / *ref;
            predictions.push_back(std::move(p));
        }
        out["predictions"] = std::move(predictions);
        return {200, out.dump(), timing};
    }

    HttpReply profile_impl(const std::string& raw) const {
        const auto body = detail::parse_object(raw);
        detail::reject_unknown_fields(body, {"radionuclide", "stability", "release_height_m", "distances_m", "models",
                                             "include_reference"});
        const auto& grid = detail::field(body, "distances_m");
        if (!grid.is_array() || grid.empty()) detail::bad_request("distances_m must be a non-empty array");
        if (grid.size() > kMaxProfilePoints) {
            detail::bad_request("distances_m holds more than " + std::to_string(kMaxProfilePoints) + " points");
        }
        std::vector<double> distances;
        for (const auto& v : grid) {
            if (!v.is_number() || !std::isfinite(v.get<double>())) detail::bad_request("distances_m must hold numbers");
            distances.push_back(v.get<double>());
            check_distance(distances.back());
        }
        const auto q = decode_common(body);
        std::string timing;
        json out{{"radionuclide", q.nuclide->name},
                 {"stability", to_string(q.stability)},
                 {"release_height_m", q.height},
                 {"distances_m", distances}};
        if (q.include_reference) {
            const auto t0 = std::chrono::steady_clock::now();
            json doses = json::array(), errors = json::array();
            for (const double d : distances) {
                double err = 0.0;
                doses.push_back(reference(q, d, &err));
                errors.push_back(err);
            }
            timing = "reference;dur=" + text::format_fixed(detail::elapsed_ms(t0), 3);
            out["reference"] = {{"doses_uSv_per_hr", doses}, {"error_estimates_uSv_per_hr", errors}};
        }
        json curves = json::array();
        for (const auto& family : q.models) {
            const auto& m = models_.at(family);
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<Scenario> scenarios;
            json flags = json::array();
            for (const double d : distances) {
                scenarios.push_back(Scenario{q.nuclide->name, q.stability, q.height, d});
                flags.push_back(!m.pre.in_bounds(q.height, d));
            }
            const auto doses = predict_dose(m, scenarios);
            timing += (timing.empty() ? "" : ", ") + family + ";dur=" + text::format_fixed(detail::elapsed_ms(t0), 3);
            curves.push_back({{"model", family}, {"doses_uSv_per_hr", doses}, {"extrapolation", flags}});
        }
        out["curves"] = std::move(curves);
        return {200, out.dump(), timing};
    }

    static constexpr std::size_t kMaxProfilePoints = 500;

    NuclideDB db_;
    std::map<std::string, Model> models_;
    KernelConfig kernel_;
};

inline Service make_service(const ServiceConfig& cfg) {
    auto db = cfg.db_path.empty() ? load_default_db() : load_db_file(cfg.db_path);
    std::map<std::string, Model> models;
    for (const auto& [family, path] : cfg.models) models.emplace(family, load_model_file(path));
    return Service(std::move(db), std::move(models), cfg.kernel);
}

/// Serves until the server is stopped; returns false if the socket could not be bound.
inline bool serve(const Service& service, httplib::Server& server, const ServiceConfig& cfg) {
    const auto threads = cfg.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    service.install(server);
    return server.listen(cfg.host, cfg.port);
}

}  // namespace plumeshine

#endif
