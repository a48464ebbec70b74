#ifndef PLUMESHINE_EVALUATION_HPP
#define PLUMESHINE_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "plumeshine/dataset.hpp"
#include "plumeshine/ensemble.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/parallel.hpp"
#include "plumeshine/random.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

struct MetricSet {
    double r2 = 0.0;
    double mape_percent = 0.0;
    double smape_percent = 0.0;
    double rmse_physical = 0.0;  ///< uSv/h
};

/// R^2, MAPE, sMAPE and RMSE on the physical dose scale.
inline MetricSet metrics(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
    const auto n = y_true.size();
    if (n < 2 || y_pred.size() != n) throw ValidationError("metrics need two equal-length vectors of >= 2 values");
    double mean = 0.0;
    for (const double y : y_true) {
        if (!(y > 0.0)) throw DomainError("reference doses must be positive");
        mean += y;
    }
    mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0, ape = 0.0, sape = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = y_true[i], p = y_pred[i];
        const double r = y - p;
        ss_res += r * r;
        ss_tot += (y - mean) * (y - mean);
        ape += std::abs(r) / std::abs(y);
        const double denom = std::abs(y) + std::abs(p);
        sape += denom == 0.0 ? 0.0 : 2.0 * std::abs(r) / denom;
    }
    if (ss_tot == 0.0) throw DomainError("R^2 undefined: reference values have zero variance");
    const double scale = 100.0 / static_cast<double>(n);
    return MetricSet{1.0 - ss_res / ss_tot, scale * ape, scale * sape, std::sqrt(ss_res / static_cast<double>(n))};
}

/// Percentile `q` in [0, 100] of sorted values, interpolating linearly
/// between order statistics at rank q/100 * (n - 1).
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ValidationError("percentile of an empty sample");
    if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, q);
}

inline std::vector<double> relative_errors_percent(const std::vector<double>& y_true,
                                                   const std::vector<double>& y_pred) {
    if (y_true.size() != y_pred.size()) throw ValidationError("length mismatch");
    std::vector<double> out(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (!(y_true[i] > 0.0)) throw DomainError("reference doses must be positive");
        out[i] = 100.0 * std::abs(y_true[i] - y_pred[i]) / y_true[i];
    }
    return out;
}

enum class GroupBy { stability, radionuclide };

inline std::string to_string(GroupBy g) { return g == GroupBy::stability ? "stability" : "radionuclide"; }

struct RegimeStats {
    std::string group;
    std::size_t count = 0;
    double median = 0.0;  ///< relative error, %
    double p10 = 0.0;
    double p90 = 0.0;
};

inline std::vector<RegimeStats> regime_stats(const std::vector<Scenario>& scenarios,
                                             const std::vector<double>& y_true, const std::vector<double>& y_pred,
                                             GroupBy by) {
    if (scenarios.size() != y_true.size()) throw ValidationError("length mismatch");
    const auto err = relative_errors_percent(y_true, y_pred);
    std::map<std::string, std::vector<double>> groups;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const auto key = by == GroupBy::stability ? to_string(scenarios[i].stability) : scenarios[i].nuclide;
        groups[key].push_back(err[i]);
    }
    std::vector<RegimeStats> out;
    for (auto& [key, v] : groups) {
        std::sort(v.begin(), v.end());
        out.push_back({key, v.size(), percentile_sorted(v, 50.0), percentile_sorted(v, 10.0),
                       percentile_sorted(v, 90.0)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Importance

inline constexpr std::size_t kMinImportanceRows = 20;
inline constexpr std::size_t kMinImportanceRepeats = 5;

struct ImportanceMatrix {
    std::vector<std::string> nuclides;                      ///< row labels
    std::vector<std::array<double, kNumFeatures>> raw;      ///< mean log-space MSE increase
    std::vector<std::array<double, kNumFeatures>> normalized;

    std::size_t argmax(std::size_t row) const {
        const auto& r = normalized[row];
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
};

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

/// Per radionuclide r and feature f: mean over repeats of the log-space MSE
/// with column f shuffled inside the rows of r, minus the unshuffled MSE.
/// Negative deltas are clipped to 0 and each row is normalized to sum to 1.
inline ImportanceMatrix conditional_permutation_importance(const Model& model, const DoseTable& test,
                                                           std::size_t repeats, std::uint64_t seed,
                                                           std::size_t jobs = 1) {
    if (repeats < kMinImportanceRepeats) throw ValidationError("permutation importance needs >= 5 repeats");
    std::map<std::string, std::vector<DoseRow>> by_nuclide;
    for (const auto& r : test.rows) by_nuclide[r.scenario.nuclide].push_back(r);
    if (by_nuclide.empty()) throw ValidationError("importance test set is empty");

    struct Subset {
        FeatureMatrix X;
        std::vector<double> y;
        double baseline;
    };
    ImportanceMatrix out;
    std::vector<Subset> subsets;
    for (const auto& [name, rows] : by_nuclide) {
        if (rows.size() < kMinImportanceRows) {
            throw ValidationError("radionuclide " + name + " has " + std::to_string(rows.size()) +
                                  " test rows; importance needs >= " + std::to_string(kMinImportanceRows));
        }
        DoseTable t;
        t.rows = rows;
        auto d = model.pre.transform(t);
        const double base = mse(predict(model, d.X), d.y);
        out.nuclides.push_back(name);
        subsets.push_back(Subset{std::move(d.X), std::move(d.y), base});
    }

    const std::size_t n_tasks = subsets.size() * kNumFeatures * repeats;
    std::vector<double> delta(n_tasks);
    parallel_for(n_tasks, jobs, [&](std::size_t task) {
        const std::size_t r = task / (kNumFeatures * repeats);
        const std::size_t f = (task / repeats) % kNumFeatures;
        const std::size_t k = task % repeats;
        const auto& s = subsets[r];
        std::vector<std::size_t> perm(s.X.rows);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng rng(derive_seed(derive_seed(derive_seed(seed, out.nuclides[r]), f), k));
        rng.shuffle(perm);
        FeatureMatrix Xp = s.X;
        for (std::size_t i = 0; i < perm.size(); ++i) Xp.at(i, f) = s.X.at(perm[i], f);
        delta[task] = mse(predict(model, Xp), s.y) - s.baseline;
    });

    for (std::size_t r = 0; r < subsets.size(); ++r) {
        std::array<double, kNumFeatures> raw{}, norm{};
        double total = 0.0;
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
            double sum = 0.0;
            for (std::size_t k = 0; k < repeats; ++k) sum += delta[(r * kNumFeatures + f) * repeats + k];
            raw[f] = sum / static_cast<double>(repeats);
            norm[f] = std::max(0.0, raw[f]);
            total += norm[f];
        }
        if (!(total > 0.0)) {
            throw DomainError("no feature increases the error for " + out.nuclides[r] + "; row cannot be normalized");
        }
        for (auto& v : norm) v /= total;
        out.raw.push_back(raw);
        out.normalized.push_back(norm);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationEntry {
    unsigned mask = 0;  ///< bit f set when feature f is active
    std::vector<std::size_t> features;
    double rmse = 0.0;  ///< physical dose space, uSv/h
};

struct AblationTable {
    ModelFamily family = ModelFamily::boosted;
    std::vector<AblationEntry> entries;             ///< ordered by size, then mask
    std::array<double, kNumFeatures> mean_by_size{};  ///< index = size - 1
};

inline std::string feature_list(const std::vector<std::size_t>& features, char sep = '+') {
    std::string s;
    for (const auto f : features) {
        if (!s.empty()) s += sep;
        s += kFeatureNames[f];
    }
    return s;
}

inline double physical_rmse(const Model& m, const DoseTable& test) {
    std::vector<Scenario> scenarios;
    std::vector<double> truth;
    for (const auto& r : test.rows) {
        scenarios.push_back(r.scenario);
        truth.push_back(r.dose);
    }
    return rmse(truth, predict_dose(m, scenarios));
}

/// Retrains the family from scratch on every non-empty feature subset and
/// scores each on `test`.
inline AblationTable exhaustive_ablation(ModelFamily family, const DoseTable& train, const DoseTable& test,
                                         const ForestParams& fp, const BoostedParams& bp, std::uint64_t seed,
                                         std::size_t jobs = 1) {
    constexpr unsigned n_masks = (1u << kNumFeatures) - 1;
    std::vector<unsigned> masks;
    for (unsigned m = 1; m <= n_masks; ++m) masks.push_back(m);
    std::stable_sort(masks.begin(), masks.end(),
                     [](unsigned a, unsigned b) { return std::popcount(a) < std::popcount(b); });
    AblationTable out;
    out.family = family;
    out.entries.resize(masks.size());
    parallel_for(masks.size(), jobs, [&](std::size_t i) {
        AblationEntry e;
        e.mask = masks[i];
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
            if (e.mask & (1u << f)) e.features.push_back(f);
        }
        try {
            const auto model = train_model(family, train, fp, bp, seed, e.features, 1);
            e.rmse = physical_rmse(model, test);
        } catch (const Error& err) {
            throw Error(err.kind(), "ablation subset {" + feature_list(e.features) + "}: " + err.what());
        }
        out.entries[i] = std::move(e);
    });
    std::array<std::size_t, kNumFeatures> counts{};
    for (const auto& e : out.entries) {
        const auto k = e.features.size() - 1;
        out.mean_by_size[k] += e.rmse;
        ++counts[k];
    }
    for (std::size_t k = 0; k < kNumFeatures; ++k) out.mean_by_size[k] /= static_cast<double>(counts[k]);
    return out;
}

// ---------------------------------------------------------------------------
// Reports (CSV, one header line)

struct Evaluation {
    ModelFamily family;
    std::string train_set;
    std::string test_set;
    std::vector<Scenario> scenarios;
    std::vector<double> truth;
    std::vector<double> prediction;
    MetricSet metrics;
};

inline Evaluation evaluate(const Model& m, const DoseTable& test, std::string train_set, std::string test_set) {
    Evaluation e{m.family, std::move(train_set), std::move(test_set), {}, {}, {}, {}};
    for (const auto& r : test.rows) {
        e.scenarios.push_back(r.scenario);
        e.truth.push_back(r.dose);
    }
    e.prediction = predict_dose(m, e.scenarios);
    e.metrics = metrics(e.truth, e.prediction);
    return e;
}

inline std::string fmt(double v) { return text::format_double(v); }

/// One row per (model, training set, test set).
inline void write_metrics_report(const std::vector<Evaluation>& evals, std::ostream& out) {
    out << "model,train_set,test_set,n_test,r2,mape_percent,smape_percent,rmse_uSv_per_hr\n";
    for (const auto& e : evals) {
        out << to_string(e.family) << ',' << e.train_set << ',' << e.test_set << ',' << e.truth.size() << ','
            << fmt(e.metrics.r2) << ',' << fmt(e.metrics.mape_percent) << ',' << fmt(e.metrics.smape_percent) << ','
            << fmt(e.metrics.rmse_physical) << '\n';
    }
}

/// Median and 10th/90th percentile errors per regime.
inline void write_regime_report(const std::vector<Evaluation>& evals, std::ostream& out) {
    out << "model,train_set,test_set,group_by,group,count,median_pct,p10_pct,p90_pct\n";
    for (const auto& e : evals) {
        for (const auto by : {GroupBy::stability, GroupBy::radionuclide}) {
            for (const auto& s : regime_stats(e.scenarios, e.truth, e.prediction, by)) {
                out << to_string(e.family) << ',' << e.train_set << ',' << e.test_set << ',' << to_string(by) << ','
                    << s.group << ',' << s.count << ',' << fmt(s.median) << ',' << fmt(s.p10) << ',' << fmt(s.p90)
                    << '\n';
            }
        }
    }
}

/// Per-row error samples.
inline void write_error_samples(const std::vector<Evaluation>& evals, std::ostream& out) {
    out << "model,train_set,test_set,radionuclide,stability,release_height_m,distance_m,dose_uSv_per_hr,"
           "predicted_uSv_per_hr,relative_error_pct\n";
    for (const auto& e : evals) {
        const auto err = relative_errors_percent(e.truth, e.prediction);
        for (std::size_t i = 0; i < e.scenarios.size(); ++i) {
            const auto& s = e.scenarios[i];
            out << to_string(e.family) << ',' << e.train_set << ',' << e.test_set << ',' << s.nuclide << ','
                << to_string(s.stability) << ',' << fmt(s.height) << ',' << fmt(s.distance) << ','
                << fmt(e.truth[i]) << ',' << fmt(e.prediction[i]) << ',' << fmt(err[i]) << '\n';
        }
    }
}

/// Raw and normalized matrices stacked, tagged by `kind`.
inline void write_importance_report(const ImportanceMatrix& m, std::ostream& out) {
    out << "kind,radionuclide";
    for (const auto n : kFeatureNames) out << ',' << n;
    out << '\n';
    for (const auto* block : {&m.raw, &m.normalized}) {
        const char* kind = block == &m.raw ? "raw" : "normalized";
        for (std::size_t r = 0; r < m.nuclides.size(); ++r) {
            out << kind << ',' << m.nuclides[r];
            for (const double v : (*block)[r]) out << ',' << fmt(v);
            out << '\n';
        }
    }
}

/// Subset rows followed by the mean-by-size curve.
inline void write_ablation_report(const AblationTable& t, std::ostream& out) {
    out << "model,kind,size,features,rmse_uSv_per_hr\n";
    for (const auto& e : t.entries) {
        out << to_string(t.family) << ",subset," << e.features.size() << ',' << feature_list(e.features) << ','
            << fmt(e.rmse) << '\n';
    }
    for (std::size_t k = 0; k < kNumFeatures; ++k) {
        out << to_string(t.family) << ",mean_by_size," << k + 1 << ",," << fmt(t.mean_by_size[k]) << '\n';
    }
}

}  // namespace plumeshine

#endif
