// Command-line driver: pipeline stages, reference profiles and the HTTP service.

#include <pthread.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "plumeshine/plumeshine.hpp"
#include "plumeshine/service.hpp"

namespace fs = std::filesystem;
using namespace plumeshine;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::size_t jobs = 0;
    std::string db;
};

text::KeyValue read_config(const Globals& g) {
    text::KeyValue kv;
    if (!g.config.empty()) kv = text::KeyValue::parse(read_text_file(g.config));
    if (g.seed) kv.set("seed", std::to_string(*g.seed));
    if (g.jobs) kv.set("jobs", std::to_string(g.jobs));
    return kv;
}

PipelineConfig pipeline_config(const Globals& g) { return PipelineConfig::from(read_config(g)); }

NuclideDB database(const Globals& g) { return g.db.empty() ? load_default_db() : load_db_file(g.db); }

DoseTable concat(const std::vector<std::string>& paths) {
    DoseTable t;
    for (const auto& p : paths) {
        auto part = load_table(p);
        t.provenance = part.provenance;
        t.rows.insert(t.rows.end(), part.rows.begin(), part.rows.end());
    }
    t.sort();
    return t;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

void note(const std::string& m) { std::cerr << m << '\n'; }

// Runs the server with SIGINT/SIGTERM taken by a sigwait thread, so a signal
// that lands before the socket is listening still stops it.
bool serve_until_signalled(const Service& service, httplib::Server& server, const ServiceConfig& cfg) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    std::atomic<bool> finished{false};
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        while (!finished && !server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
        server.stop();
    });
    const bool ok = serve(service, server, cfg);
    finished = true;
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"plumeshine: plume-shine gamma dose reference calculations and tree-ensemble surrogates"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "key: value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed (overrides the config)");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--jobs", g.jobs, "worker threads, 0 = all cores");
    app.add_option("--db", g.db, "nuclide/photon database (default: bundled data/air_gamma.dat)")
        ->check(CLI::ExistingFile);

    auto* generate = app.add_subcommand("generate", "low-resolution dose table over the config grid");

    std::string densify_in;
    auto* densify_cmd = app.add_subcommand("densify", "PCHIP densification along distance");
    densify_cmd->add_option("--in", densify_in, "low-resolution table (normally the training split)")
        ->required()
        ->check(CLI::ExistingFile);

    std::string split_in;
    auto* split_cmd = app.add_subcommand("split", "seeded train/test split of a table");
    split_cmd->add_option("--in", split_in, "table to split")->required()->check(CLI::ExistingFile);

    std::string train_in, family_name = "boosted";
    auto* train = app.add_subcommand("train", "fit a forest or boosted model");
    train->add_option("--train", train_in, "training table")->required()->check(CLI::ExistingFile);
    train->add_option("--family", family_name, "forest | boosted")->check(CLI::IsMember({"forest", "boosted"}));

    std::vector<std::string> models, tests;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "metrics and regime statistics");
    evaluate_cmd->add_option("--model", models, "model file(s)")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--test", tests, "test table(s)")->required()->check(CLI::ExistingFile);

    std::string importance_model;
    std::vector<std::string> importance_tests;
    auto* importance = app.add_subcommand("importance", "radionuclide-conditional permutation importance");
    importance->add_option("--model", importance_model, "model file")->required()->check(CLI::ExistingFile);
    importance->add_option("--test", importance_tests, "test table(s), concatenated")
        ->required()
        ->check(CLI::ExistingFile);

    std::string ablate_train;
    std::vector<std::string> ablate_tests;
    auto* ablate = app.add_subcommand("ablate", "retrain on every feature subset");
    ablate->add_option("--family", family_name, "forest | boosted")->check(CLI::IsMember({"forest", "boosted"}));
    ablate->add_option("--train", ablate_train, "training table")->required()->check(CLI::ExistingFile);
    ablate->add_option("--test", ablate_tests, "test table(s), concatenated")->required()->check(CLI::ExistingFile);

    std::string nuclide, stability = "D";
    double height = 50.0;
    std::vector<double> distances;
    auto* profile = app.add_subcommand("profile", "reference dose versus downwind distance");
    profile->add_option("--nuclide", nuclide, "radionuclide, e.g. Cs-137")->required();
    profile->add_option("--stability", stability, "stability class A-F");
    profile->add_option("--height", height, "release height, m");
    profile->add_option("--distances", distances, "distances in m (default: the 45-point table grid)")
        ->delimiter(',');

    auto* pipeline = app.add_subcommand("pipeline", "all stages end to end");

    std::optional<std::string> host;
    std::optional<int> port;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP service (config keys: host, port, db, model.forest, ...)");
    serve_cmd->add_option("--host", host, "bind address");
    serve_cmd->add_option("--port", port, "port");

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path out = g.out;
        if (generate->parsed()) {
            const auto cfg = pipeline_config(g);
            auto t = generate_lowres(database(g), cfg.grid, cfg.kernel, resolve_jobs(cfg.jobs));
            save_table(t, out / "lowres.csv");
            note("wrote " + (out / "lowres.csv").string() + " (" + std::to_string(t.size()) + " rows)");
        } else if (densify_cmd->parsed()) {
            const auto cfg = pipeline_config(g);
            auto t = plumeshine::densify(load_table(densify_in), cfg.points_per_group, cfg.drop_knots, resolve_jobs(cfg.jobs));
            save_table(t, out / "highres.csv");
            note("wrote " + (out / "highres.csv").string() + " (" + std::to_string(t.size()) + " rows)");
        } else if (split_cmd->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto t = load_table(split_in);
            const bool low = t.provenance == Provenance::lowres;
            const auto [tr, te] = plumeshine::split(t, low ? cfg.split.lowres_test_fraction : cfg.split.highres_test_fraction,
                                                    cfg.split_seed(low ? "lowres" : "highres"));
            save_table(tr, out / (stem(split_in) + "_train.csv"));
            save_table(te, out / (stem(split_in) + "_test.csv"));
            note("split " + std::to_string(tr.size()) + " train / " + std::to_string(te.size()) + " test");
        } else if (train->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto family = parse_family(family_name);
            auto m = train_model(family, load_table(train_in), cfg.forest, cfg.boosted, cfg.seed, {0, 1, 2, 3},
                                 resolve_jobs(cfg.jobs));
            auto train_set = stem(train_in);
            if (train_set.size() > 6 && train_set.ends_with("_train")) train_set.resize(train_set.size() - 6);
            const auto path = out / (TrainedModels::name(family, train_set) + ".model");
            save_model_file(m, path);
            note("wrote " + path.string() + " (" + std::to_string(m.trees.size()) + " trees)");
        } else if (evaluate_cmd->parsed()) {
            std::vector<Evaluation> evals;
            for (const auto& mp : models) {
                const auto m = load_model_file(mp);
                auto train_set = stem(mp);
                if (const auto cut = train_set.find('_'); cut != std::string::npos) train_set = train_set.substr(cut + 1);
                for (const auto& tp : tests) evals.push_back(evaluate(m, load_table(tp), train_set, stem(tp)));
            }
            std::ostringstream metrics_csv, regimes, errors;
            write_metrics_report(evals, metrics_csv);
            write_regime_report(evals, regimes);
            write_error_samples(evals, errors);
            write_text_file(out / "metrics.csv", metrics_csv.str());
            write_text_file(out / "regimes.csv", regimes.str());
            write_text_file(out / "errors.csv", errors.str());
            std::cout << metrics_csv.str();
        } else if (importance->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto m = load_model_file(importance_model);
            const auto imp = conditional_permutation_importance(m, concat(importance_tests), cfg.importance_repeats,
                                                                derive_seed(cfg.seed, "importance"),
                                                                resolve_jobs(cfg.jobs));
            std::ostringstream s;
            write_importance_report(imp, s);
            write_text_file(out / ("importance_" + to_string(m.family) + ".csv"), s.str());
            std::cout << s.str();
        } else if (ablate->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto family = parse_family(family_name);
            const auto table = exhaustive_ablation(family, load_table(ablate_train), concat(ablate_tests), cfg.forest,
                                                   cfg.boosted, cfg.seed, resolve_jobs(cfg.jobs));
            std::ostringstream s;
            write_ablation_report(table, s);
            write_text_file(out / ("ablation_" + to_string(family) + ".csv"), s.str());
            std::cout << s.str();
        } else if (profile->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto db = database(g);
            if (distances.empty()) distances = Grid::default_distances();
            const auto& rec = db.at(nuclide);
            const auto stab = parse_stability(stability);
            const auto curve = dose_profile(db, rec, stab, height, distances, cfg.kernel, resolve_jobs(cfg.jobs));
            std::ostringstream s;
            s << "radionuclide,stability,release_height_m,distance_m,dose_uSv_per_hr\n";
            for (const auto& [d, dose] : curve) {
                s << rec.name << ',' << to_string(stab) << ',' << text::format_double(height) << ','
                  << text::format_double(d) << ',' << text::format_sci(dose, 9) << '\n';
            }
            if (g.out != ".") {
                write_text_file(out / ("profile_" + rec.name + "_" + to_string(stab) + "_" +
                                       text::format_double(height) + ".csv"),
                                s.str());
            }
            std::cout << s.str();
        } else if (pipeline->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto r = run_pipeline(database(g), cfg, out, note);
            std::ostringstream s;
            write_metrics_report(r.evaluations, s);
            std::cout << s.str();
        } else if (serve_cmd->parsed()) {
            auto kv = read_config(g);
            if (!g.db.empty()) kv.set("db", g.db);
            if (host) kv.set("host", *host);
            if (port) kv.set("port", std::to_string(*port));
            const auto cfg = ServiceConfig::from(kv);
            const auto service = make_service(cfg);
            httplib::Server server;
            note("listening on " + cfg.host + ":" + std::to_string(cfg.port));
            if (!serve_until_signalled(service, server, cfg)) throw IoError("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: InternalError: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
