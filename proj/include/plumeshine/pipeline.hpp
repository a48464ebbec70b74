#ifndef PLUMESHINE_PIPELINE_HPP
#define PLUMESHINE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "plumeshine/dataset.hpp"
#include "plumeshine/dose_kernel.hpp"
#include "plumeshine/ensemble.hpp"
#include "plumeshine/evaluation.hpp"
#include "plumeshine/nuclide_db.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

/// Everything a pipeline run depends on besides the nuclide database.
/// Defaults are the desk-scale grid.
struct PipelineConfig {
    Grid grid{{"Xe-135", "Cs-137", "Eu-155", "Co-60"},
              {kAllStabilityClasses.begin(), kAllStabilityClasses.end()},
              {10.0, 50.0, 100.0, 150.0, 200.0},
              Grid::default_distances()};
    KernelConfig kernel;
    std::size_t points_per_group = 400;
    bool drop_knots = true;
    SplitSpec split{3007, 0.01, 0.01};
    ForestParams forest;
    BoostedParams boosted;
    std::size_t importance_repeats = 10;
    std::uint64_t seed = 3007;
    std::size_t jobs = 0;  ///< 0 = all cores; never affects results

    std::uint64_t split_seed(std::string_view which) const { return derive_seed(split.seed, which); }

    static PipelineConfig from(const text::KeyValue& kv) {
        PipelineConfig c;
        auto list = [&](const std::string& key) { return kv.get_list(key); };
        auto numbers = [&](const std::string& key) {
            std::vector<double> out;
            for (const auto& v : list(key)) {
                const auto d = text::parse_double(v);
                if (!d) throw ValidationError("key '" + key + "' has a non-numeric entry: " + v);
                out.push_back(*d);
            }
            return out;
        };
        auto size = [&](const std::string& key, std::size_t fallback) {
            return static_cast<std::size_t>(kv.get_u64_or(key, fallback));
        };
        auto flag = [&](const std::string& key, bool fallback) {
            if (!kv.has(key)) return fallback;
            const auto v = kv.get(key);
            if (v == "true") return true;
            if (v == "false") return false;
            throw ValidationError("key '" + key + "' must be true or false");
        };
        if (kv.has("nuclides")) c.grid.nuclides = list("nuclides");
        if (kv.has("stabilities")) {
            c.grid.stabilities.clear();
            for (const auto& s : list("stabilities")) c.grid.stabilities.push_back(parse_stability(s));
        }
        if (kv.has("heights")) c.grid.heights = numbers("heights");
        if (kv.has("distances")) {
            c.grid.distances = numbers("distances");
        } else if (kv.has("distance_count") || kv.has("distance_spacing")) {
            const double lo = kv.get_double_or("distance_min", kTableMinDistance);
            const double hi = kv.get_double_or("distance_max", kTableMaxDistance);
            const auto n = size("distance_count", 45);
            const auto spacing = kv.get_or("distance_spacing", "log");
            if (spacing == "log") {
                c.grid.distances = log_spaced(lo, hi, n);
            } else if (spacing == "linear") {
                c.grid.distances = linear_spaced(lo, hi, n);
            } else {
                throw ValidationError("distance_spacing must be 'log' or 'linear'");
            }
        }
        c.kernel = KernelConfig::from(kv);
        c.points_per_group = size("points_per_group", c.points_per_group);
        c.drop_knots = flag("drop_knots", c.drop_knots);
        c.seed = kv.get_u64_or("seed", c.seed);
        c.split.seed = kv.get_u64_or("split.seed", c.seed);
        c.split.lowres_test_fraction = kv.get_double_or("lowres_test_fraction", c.split.lowres_test_fraction);
        c.split.highres_test_fraction = kv.get_double_or("highres_test_fraction", c.split.highres_test_fraction);
        c.forest.n_estimators = size("forest.n_estimators", c.forest.n_estimators);
        c.forest.max_depth = size("forest.max_depth", c.forest.max_depth);
        c.forest.max_features = kv.get_double_or("forest.max_features", c.forest.max_features);
        c.forest.bootstrap = flag("forest.bootstrap", c.forest.bootstrap);
        c.forest.min_samples_leaf = size("forest.min_samples_leaf", c.forest.min_samples_leaf);
        c.boosted.learning_rate = kv.get_double_or("boosted.learning_rate", c.boosted.learning_rate);
        c.boosted.max_depth = size("boosted.max_depth", c.boosted.max_depth);
        c.boosted.subsample = kv.get_double_or("boosted.subsample", c.boosted.subsample);
        c.boosted.colsample_bytree = kv.get_double_or("boosted.colsample_bytree", c.boosted.colsample_bytree);
        c.boosted.rounds = size("boosted.rounds", c.boosted.rounds);
        c.boosted.early_stopping_rounds = size("boosted.early_stopping_rounds", c.boosted.early_stopping_rounds);
        c.boosted.validation_fraction =
            kv.get_double_or("boosted.validation_fraction", c.boosted.validation_fraction);
        c.boosted.min_samples_leaf = size("boosted.min_samples_leaf", c.boosted.min_samples_leaf);
        c.importance_repeats = size("importance_repeats", c.importance_repeats);
        c.jobs = size("jobs", c.jobs);
        c.validate();
        return c;
    }

    static PipelineConfig load(const std::filesystem::path& path) {
        return from(text::KeyValue::parse(read_text_file(path)));
    }

    void validate() const {
        grid.validate();
        kernel.validate();
        split.validate();
        forest.validate();
        boosted.validate();
        if (points_per_group < 2) throw ValidationError("points_per_group must be >= 2");
        if (importance_repeats < kMinImportanceRepeats) throw ValidationError("importance_repeats must be >= 5");
    }

    /// Canonical dump; everything that influences outputs, nothing that does not.
    text::KeyValue describe() const {
        using text::format_double;
        text::KeyValue kv;
        grid.describe(kv);
        kv.set("kernel", kernel.canonical());
        kv.set("points_per_group", std::to_string(points_per_group));
        kv.set("drop_knots", drop_knots ? "true" : "false");
        kv.set("seed", std::to_string(seed));
        kv.set("split.seed", std::to_string(split.seed));
        kv.set("lowres_test_fraction", format_double(split.lowres_test_fraction));
        kv.set("highres_test_fraction", format_double(split.highres_test_fraction));
        kv.set("importance_repeats", std::to_string(importance_repeats));
        return kv;
    }
};

/// The six tables of the four-way dataset construction. The high-resolution
/// table is densified from the low-resolution training split only.
struct Datasets {
    DoseTable lowres, lowres_train, lowres_test;
    DoseTable highres, highres_train, highres_test;

    DoseTable unified_test() const {
        DoseTable t;
        t.provenance = Provenance::lowres;
        t.rows = lowres_test.rows;
        t.rows.insert(t.rows.end(), highres_test.rows.begin(), highres_test.rows.end());
        t.sort();
        return t;
    }
};

using Logger = std::function<void(const std::string&)>;

inline Datasets build_datasets(DoseTable lowres, const PipelineConfig& cfg, std::size_t jobs) {
    Datasets d;
    d.lowres = std::move(lowres);
    std::tie(d.lowres_train, d.lowres_test) =
        split(d.lowres, cfg.split.lowres_test_fraction, cfg.split_seed("lowres"));
    d.highres = densify(d.lowres_train, cfg.points_per_group, cfg.drop_knots, jobs);
    std::tie(d.highres_train, d.highres_test) =
        split(d.highres, cfg.split.highres_test_fraction, cfg.split_seed("highres"));
    return d;
}

struct TrainedModels {
    std::map<std::string, Model> by_name;  ///< "<family>_<train set>"

    static std::string name(ModelFamily f, const std::string& train_set) { return to_string(f) + "_" + train_set; }
    const Model& get(ModelFamily f, const std::string& train_set) const { return by_name.at(name(f, train_set)); }
};

struct PipelineResult {
    Datasets data;
    TrainedModels models;
    std::vector<Evaluation> evaluations;
    std::map<ModelFamily, ImportanceMatrix> importance;
    std::map<ModelFamily, AblationTable> ablation;
};

inline constexpr std::array<ModelFamily, 2> kFamilies{ModelFamily::forest, ModelFamily::boosted};

/// Runs generate, split, densify, train, evaluate, importance and ablate,
/// writing every artifact under `out`. Outputs depend only on the database,
/// the config and the seed.
inline PipelineResult run_pipeline(const NuclideDB& db, const PipelineConfig& cfg, const std::filesystem::path& out,
                                   const Logger& log = {}) {
    cfg.validate();
    auto say = [&](const std::string& m) {
        if (log) log(m);
    };
    const auto jobs = resolve_jobs(cfg.jobs);
    PipelineResult r;

    say("generate: " + std::to_string(cfg.grid.size()) + " grid points");
    auto lowres = generate_lowres(db, cfg.grid, cfg.kernel, jobs);
    r.data = build_datasets(std::move(lowres), cfg, jobs);
    const auto data_dir = out / "data";
    save_table(r.data.lowres, data_dir / "lowres.csv");
    save_table(r.data.lowres_train, data_dir / "lowres_train.csv");
    save_table(r.data.lowres_test, data_dir / "lowres_test.csv");
    save_table(r.data.highres, data_dir / "highres.csv");
    save_table(r.data.highres_train, data_dir / "highres_train.csv");
    save_table(r.data.highres_test, data_dir / "highres_test.csv");
    say("densify: " + std::to_string(r.data.highres.size()) + " high-resolution rows");

    const std::map<std::string, const DoseTable*> train_sets{{"lowres", &r.data.lowres_train},
                                                             {"highres", &r.data.highres_train}};
    const std::map<std::string, const DoseTable*> test_sets{{"lowres_test", &r.data.lowres_test},
                                                            {"highres_test", &r.data.highres_test}};
    for (const auto family : kFamilies) {
        for (const auto& [train_name, train] : train_sets) {
            say("train: " + TrainedModels::name(family, train_name));
            auto m = train_model(family, *train, cfg.forest, cfg.boosted, cfg.seed, {0, 1, 2, 3}, jobs);
            save_model_file(m, out / "models" / (TrainedModels::name(family, train_name) + ".model"));
            r.models.by_name.emplace(TrainedModels::name(family, train_name), std::move(m));
        }
    }
    for (const auto family : kFamilies) {
        for (const auto& [train_name, train] : train_sets) {
            for (const auto& [test_name, test] : test_sets) {
                r.evaluations.push_back(evaluate(r.models.get(family, train_name), *test, train_name, test_name));
            }
        }
    }
    const auto reports = out / "reports";
    {
        std::ostringstream m, g, e;
        write_metrics_report(r.evaluations, m);
        write_regime_report(r.evaluations, g);
        write_error_samples(r.evaluations, e);
        write_text_file(reports / "metrics.csv", m.str());
        write_text_file(reports / "regimes.csv", g.str());
        write_text_file(reports / "errors.csv", e.str());
    }

    const auto unified = r.data.unified_test();
    for (const auto family : kFamilies) {
        say("importance: " + to_string(family));
        auto imp = conditional_permutation_importance(r.models.get(family, "highres"), unified,
                                                      cfg.importance_repeats, derive_seed(cfg.seed, "importance"),
                                                      jobs);
        std::ostringstream s;
        write_importance_report(imp, s);
        write_text_file(reports / ("importance_" + to_string(family) + ".csv"), s.str());
        r.importance.emplace(family, std::move(imp));
    }
    for (const auto family : kFamilies) {
        say("ablate: " + to_string(family));
        auto abl = exhaustive_ablation(family, r.data.highres_train, unified, cfg.forest, cfg.boosted, cfg.seed, jobs);
        std::ostringstream s;
        write_ablation_report(abl, s);
        write_text_file(reports / ("ablation_" + to_string(family) + ".csv"), s.str());
        r.ablation.emplace(family, std::move(abl));
    }

    auto summary = cfg.describe();
    std::vector<double> raw, logged;
    for (const auto& row : r.data.lowres.rows) {
        raw.push_back(row.dose);
        logged.push_back(std::log10(row.dose));
    }
    summary.set("lowres_rows", std::to_string(r.data.lowres.size()));
    summary.set("highres_rows", std::to_string(r.data.highres.size()));
    summary.set("lowres_dose_skewness", text::format_double(skewness(raw)));
    summary.set("lowres_log_dose_skewness", text::format_double(skewness(logged)));
    for (const auto& [name, m] : r.models.by_name) summary.set("trees." + name, std::to_string(m.trees.size()));
    write_text_file(reports / "summary.meta", summary.str());
    say("done");
    return r;
}

}  // namespace plumeshine

#endif
