#ifndef PLUMESHINE_DATASET_HPP
#define PLUMESHINE_DATASET_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "plumeshine/dispersion.hpp"
#include "plumeshine/dose_kernel.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/nuclide_db.hpp"
#include "plumeshine/parallel.hpp"
#include "plumeshine/pchip.hpp"
#include "plumeshine/random.hpp"
#include "plumeshine/text.hpp"

namespace plumeshine {

struct Scenario {
    std::string nuclide;
    StabilityClass stability = StabilityClass::D;
    double height = 0.0;    ///< m
    double distance = 0.0;  ///< m

    auto key() const { return std::tie(nuclide, stability, height, distance); }
    friend bool operator<(const Scenario& a, const Scenario& b) { return a.key() < b.key(); }
    friend bool operator==(const Scenario& a, const Scenario& b) { return a.key() == b.key(); }
};

struct DoseRow {
    Scenario scenario;
    double dose = 0.0;  ///< uSv/h
};

enum class Provenance { lowres, highres_interp };

inline std::string to_string(Provenance p) { return p == Provenance::lowres ? "lowres" : "highres_interp"; }

inline Provenance parse_provenance(std::string_view s) {
    if (s == "lowres") return Provenance::lowres;
    if (s == "highres_interp") return Provenance::highres_interp;
    throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

struct DoseTable {
    Provenance provenance = Provenance::lowres;
    std::vector<DoseRow> rows;
    text::KeyValue meta;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }

    void sort() {
        std::sort(rows.begin(), rows.end(),
                  [](const DoseRow& a, const DoseRow& b) { return a.scenario < b.scenario; });
    }

    std::set<Scenario> keys() const {
        std::set<Scenario> out;
        for (const auto& r : rows) out.insert(r.scenario);
        return out;
    }
};

/// Doses are persisted with 9 significant digits. Tables hold the persisted
/// value in memory too, so a pipeline run from files and one run in memory
/// see the same numbers.
inline double persisted(double dose) { return *text::parse_double(text::format_sci(dose, 9)); }

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kCsvHeader =
    "radionuclide,stability,release_height_m,distance_m,dose_uSv_per_hr";

inline void write_csv(const DoseTable& t, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const auto& r : t.rows) {
        out << r.scenario.nuclide << ',' << to_char(r.scenario.stability) << ','
            << text::format_double(r.scenario.height) << ',' << text::format_double(r.scenario.distance)
            << ',' << text::format_sci(r.dose, 9) << '\n';
    }
}

inline DoseTable read_csv(std::istream& in, Provenance provenance) {
    DoseTable t;
    t.provenance = provenance;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError("empty dose table");
    ++lineno;
    if (text::trim(line) != kCsvHeader) throw ParseError("unexpected dose table header", lineno);
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = text::trim(line);
        if (body.empty()) continue;
        std::array<std::string_view, 5> f{};
        std::size_t count = 0;
        std::string_view rest = body;
        while (true) {
            const auto comma = rest.find(',');
            if (count == f.size()) throw ParseError("expected 5 fields", lineno);
            f[count++] = text::trim(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (count != 5) throw ParseError("expected 5 fields", lineno);
        DoseRow r;
        r.scenario.nuclide = std::string(f[0]);
        try {
            r.scenario.stability = parse_stability(f[1]);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), lineno);
        }
        const auto h = text::parse_double(f[2]);
        const auto d = text::parse_double(f[3]);
        const auto dose = text::parse_double(f[4]);
        if (!h || !d || !dose) throw ParseError("malformed number", lineno);
        if (!(*dose > 0.0) || !std::isfinite(*dose)) throw ParseError("dose must be positive and finite", lineno);
        r.scenario.height = *h;
        r.scenario.distance = *d;
        r.dose = *dose;
        t.rows.push_back(std::move(r));
    }
    return t;
}

inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".meta");
    return p;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes `<path>` and its `.meta` sidecar.
inline void save_table(const DoseTable& t, const std::filesystem::path& path) {
    std::ostringstream csv;
    write_csv(t, csv);
    write_text_file(path, csv.str());
    auto meta = t.meta;
    meta.set("provenance", to_string(t.provenance));
    meta.set("rows", std::to_string(t.rows.size()));
    write_text_file(meta_path(path), meta.str());
}

inline DoseTable load_table(const std::filesystem::path& path) {
    text::KeyValue meta;
    Provenance provenance = Provenance::lowres;
    if (std::filesystem::exists(meta_path(path))) {
        meta = text::KeyValue::parse(read_text_file(meta_path(path)));
        if (meta.has("provenance")) provenance = parse_provenance(meta.get("provenance"));
    }
    std::istringstream in(read_text_file(path));
    auto t = read_csv(in, provenance);
    t.meta = std::move(meta);
    return t;
}

// ---------------------------------------------------------------------------
// Grids and generation

inline std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
    if (n < 2 || !(lo > 0.0) || !(hi > lo)) throw ValidationError("log grid needs n >= 2 and 0 < lo < hi");
    std::vector<double> out(n);
    const double step = std::log(hi / lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo * std::exp(step * static_cast<double>(i));
    out.front() = lo;
    out.back() = hi;
    return out;
}

inline std::vector<double> linear_spaced(double lo, double hi, std::size_t n) {
    if (n < 2 || !(hi > lo)) throw ValidationError("linear grid needs n >= 2 and lo < hi");
    std::vector<double> out(n);
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + span * static_cast<double>(i) / static_cast<double>(n - 1);
    out.back() = hi;
    return out;
}

struct Grid {
    std::vector<std::string> nuclides;
    std::vector<StabilityClass> stabilities{kAllStabilityClasses.begin(), kAllStabilityClasses.end()};
    std::vector<double> heights;
    std::vector<double> distances;

    std::size_t size() const { return nuclides.size() * stabilities.size() * heights.size() * distances.size(); }

    static std::vector<double> default_heights() { return linear_spaced(10.0, 200.0, 20); }
    static std::vector<double> default_distances() { return log_spaced(kTableMinDistance, kTableMaxDistance, 45); }

    void validate() const {
        if (size() == 0) throw ValidationError("grid is empty");
        for (const double h : heights) {
            if (!(h >= 10.0 && h <= 200.0)) throw ValidationError("grid heights must lie in [10, 200] m");
        }
        for (const double d : distances) {
            if (!(d >= kTableMinDistance && d <= kTableMaxDistance)) {
                throw ValidationError("grid distances must lie in [25, 2000] m");
            }
        }
    }

    /// Every grid point, in table order.
    std::vector<Scenario> scenarios() const {
        std::vector<Scenario> out;
        out.reserve(size());
        for (const auto& n : nuclides)
            for (const auto s : stabilities)
                for (const double h : heights)
                    for (const double d : distances) out.push_back(Scenario{n, s, h, d});
        std::sort(out.begin(), out.end());
        return out;
    }

    void describe(text::KeyValue& kv) const {
        auto join = [](const auto& items, auto fmt) {
            std::string s;
            for (const auto& it : items) s += (s.empty() ? "" : ",") + fmt(it);
            return s;
        };
        kv.set("grid.nuclides", join(nuclides, [](const std::string& v) { return v; }));
        kv.set("grid.stabilities", join(stabilities, [](StabilityClass v) { return to_string(v); }));
        kv.set("grid.heights", join(heights, [](double v) { return text::format_double(v); }));
        kv.set("grid.distances", join(distances, [](double v) { return text::format_double(v); }));
    }
};

inline std::string describe(const Scenario& s) {
    return s.nuclide + " class " + to_string(s.stability) + " H=" + text::format_double(s.height) +
           " m x=" + text::format_double(s.distance) + " m";
}

/// Dose for every grid point; rows come out sorted.
inline DoseTable generate_lowres(const NuclideDB& db, const Grid& grid, const KernelConfig& cfg = {},
                                 std::size_t jobs = 1) {
    grid.validate();
    cfg.validate();
    std::vector<std::string> names;
    for (const auto& n : grid.nuclides) names.push_back(db.at(n).name);
    Grid canonical = grid;
    canonical.nuclides = names;
    const auto scenarios = canonical.scenarios();
    DoseTable t;
    t.provenance = Provenance::lowres;
    t.rows.resize(scenarios.size());
    parallel_for(scenarios.size(), jobs, [&](std::size_t i) {
        const auto& s = scenarios[i];
        const ReleaseSpec release{1.0, 1.0, s.height, s.stability};
        try {
            const double dose = dose_rate(db, db.at(s.nuclide), release, Receptor{s.distance, 0.0, 1.0}, cfg);
            if (!(dose > 0.0) || !std::isfinite(dose)) {
                throw DomainError("dose " + text::format_sci(dose, 3) + " is not positive");
            }
            t.rows[i] = DoseRow{s, persisted(dose)};
        } catch (const QuadratureError& e) {
            throw QuadratureError(describe(s) + ": " + e.what(), e.value, e.error_estimate);
        } catch (const Error& e) {
            throw Error(e.kind(), describe(s) + ": " + e.what());
        }
    });
    canonical.describe(t.meta);
    t.meta.set("kernel_config", cfg.canonical());
    t.meta.set("kernel_config_hash", cfg.hash());
    return t;
}

// ---------------------------------------------------------------------------
// Densification

inline constexpr double kKnotTolerance = 1e-9;  // m

/// Rows grouped by (nuclide, stability, height), each group sorted by distance.
inline std::vector<std::vector<DoseRow>> group_rows(const DoseTable& t) {
    std::map<std::tuple<std::string, StabilityClass, double>, std::vector<DoseRow>> groups;
    for (const auto& r : t.rows) {
        groups[{r.scenario.nuclide, r.scenario.stability, r.scenario.height}].push_back(r);
    }
    std::vector<std::vector<DoseRow>> out;
    out.reserve(groups.size());
    for (auto& [key, rows] : groups) {
        std::sort(rows.begin(), rows.end(),
                  [](const DoseRow& a, const DoseRow& b) { return a.scenario.distance < b.scenario.distance; });
        out.push_back(std::move(rows));
    }
    return out;
}

/// PCHIP in log10(dose) over distance, sampled on a uniform grid per group.
inline DoseTable densify(const DoseTable& lowres, std::size_t points_per_group, bool drop_knots,
                         std::size_t jobs = 1) {
    if (points_per_group < 2) throw ValidationError("points_per_group must be >= 2");
    const auto groups = group_rows(lowres);
    std::vector<std::vector<DoseRow>> dense(groups.size());
    parallel_for(groups.size(), jobs, [&](std::size_t g) {
        const auto& knots = groups[g];
        if (knots.size() < 2) {
            throw DomainError("group " + describe(knots.front().scenario) + " has fewer than 2 distances");
        }
        std::vector<double> xs, ys;
        for (const auto& k : knots) {
            xs.push_back(k.scenario.distance);
            ys.push_back(std::log10(k.dose));
        }
        const auto curve = pchip_fit(xs, ys);
        for (const double x : linear_spaced(xs.front(), xs.back(), points_per_group)) {
            if (drop_knots) {
                const auto it = std::lower_bound(xs.begin(), xs.end(), x - kKnotTolerance);
                if (it != xs.end() && *it <= x + kKnotTolerance) continue;
            }
            Scenario s = knots.front().scenario;
            s.distance = x;
            dense[g].push_back(DoseRow{s, persisted(std::pow(10.0, pchip_eval(curve, x)))});
        }
    });
    DoseTable out;
    out.provenance = Provenance::highres_interp;
    for (auto& rows : dense) out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    out.sort();
    out.meta.set("source_rows", std::to_string(lowres.size()));
    out.meta.set("points_per_group", std::to_string(points_per_group));
    out.meta.set("drop_knots", drop_knots ? "true" : "false");
    if (lowres.meta.has("kernel_config_hash")) out.meta.set("kernel_config_hash", lowres.meta.get("kernel_config_hash"));
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    std::uint64_t seed = 3007;
    double lowres_test_fraction = 0.01;
    double highres_test_fraction = 0.00025;

    void validate() const {
        for (const double f : {lowres_test_fraction, highres_test_fraction}) {
            if (!(f > 0.0 && f < 0.5)) throw ValidationError("test fractions must lie in (0, 0.5)");
        }
    }
};

/// Seeded uniform split; returns (train, test), each sorted.
inline std::pair<DoseTable, DoseTable> split(const DoseTable& table, double test_fraction, std::uint64_t seed) {
    if (table.empty()) throw ValidationError("cannot split an empty table");
    if (!(test_fraction > 0.0 && test_fraction < 0.5)) throw ValidationError("test fraction must lie in (0, 0.5)");
    const auto n = table.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test == 0 || n_test >= n) {
        throw ValidationError("test fraction " + text::format_double(test_fraction) + " of " + std::to_string(n) +
                              " rows leaves one side empty");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<bool> in_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;
    DoseTable train, test;
    train.provenance = test.provenance = table.provenance;
    for (std::size_t i = 0; i < n; ++i) (in_test[i] ? test : train).rows.push_back(table.rows[i]);
    train.sort();
    test.sort();
    for (auto* part : {&train, &test}) {
        part->meta = table.meta;
        part->meta.set("split_seed", std::to_string(seed));
        part->meta.set("split_test_fraction", text::format_double(test_fraction));
    }
    train.meta.set("split_side", "train");
    test.meta.set("split_side", "test");
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Preprocessing

inline constexpr std::size_t kNumFeatures = 4;
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames{
    "radionuclide", "stability", "release_height", "distance"};

enum Feature : std::size_t { kRadionuclide = 0, kStability = 1, kHeight = 2, kDistance = 3 };

/// Row-major feature matrix.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }

    FeatureMatrix select(const std::vector<std::size_t>& columns) const {
        FeatureMatrix out{rows, columns.size(), std::vector<double>(rows * columns.size())};
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < columns.size(); ++j) out.at(i, j) = at(i, columns[j]);
        return out;
    }

    FeatureMatrix subset(const std::vector<std::size_t>& row_ids) const {
        FeatureMatrix out{row_ids.size(), cols, std::vector<double>(row_ids.size() * cols)};
        for (std::size_t i = 0; i < row_ids.size(); ++i)
            std::copy_n(row(row_ids[i]), cols, out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
        return out;
    }
};

struct Dataset {
    FeatureMatrix X;
    std::vector<double> y;  ///< log10 dose
};

/// Min-max scaling for height and distance, integer codes for the categorical
/// features, log10 target.
struct Preprocessor {
    std::vector<std::string> nuclides;           ///< code = index
    std::vector<StabilityClass> stabilities;     ///< code = index
    double height_min = 0.0, height_max = 0.0;
    double distance_min = 0.0, distance_max = 0.0;
    bool log_target = true;

    double nuclide_code(const std::string& name) const {
        const auto it = std::lower_bound(nuclides.begin(), nuclides.end(), name);
        if (it == nuclides.end() || *it != name) throw DomainError("radionuclide '" + name + "' unseen in training");
        return static_cast<double>(it - nuclides.begin());
    }

    double stability_code(StabilityClass s) const {
        const auto it = std::find(stabilities.begin(), stabilities.end(), s);
        if (it == stabilities.end()) throw DomainError("stability class " + to_string(s) + " unseen in training");
        return static_cast<double>(it - stabilities.begin());
    }

    double scale_height(double h) const { return (h - height_min) / (height_max - height_min); }
    double scale_distance(double d) const { return (d - distance_min) / (distance_max - distance_min); }

    bool in_bounds(double height, double distance) const {
        return height >= height_min && height <= height_max && distance >= distance_min && distance <= distance_max;
    }

    std::array<double, kNumFeatures> features(const Scenario& s) const {
        return {nuclide_code(s.nuclide), stability_code(s.stability), scale_height(s.height),
                scale_distance(s.distance)};
    }

    double target(double dose) const {
        if (!(dose > 0.0) || !std::isfinite(dose)) throw DomainError("dose must be positive and finite");
        return log_target ? std::log10(dose) : dose;
    }

    double inverse_target(double prediction) const { return log_target ? std::pow(10.0, prediction) : prediction; }

    std::vector<double> inverse_target(const std::vector<double>& predictions) const {
        std::vector<double> out;
        out.reserve(predictions.size());
        for (const double p : predictions) out.push_back(inverse_target(p));
        return out;
    }

    FeatureMatrix transform(const std::vector<Scenario>& scenarios) const {
        FeatureMatrix X{scenarios.size(), kNumFeatures, std::vector<double>(scenarios.size() * kNumFeatures)};
        for (std::size_t i = 0; i < scenarios.size(); ++i) {
            const auto f = features(scenarios[i]);
            std::copy(f.begin(), f.end(), X.data.begin() + static_cast<std::ptrdiff_t>(i * kNumFeatures));
        }
        return X;
    }

    Dataset transform(const DoseTable& t) const {
        std::vector<Scenario> scenarios;
        Dataset d;
        scenarios.reserve(t.size());
        d.y.reserve(t.size());
        for (const auto& r : t.rows) {
            scenarios.push_back(r.scenario);
            d.y.push_back(target(r.dose));
        }
        d.X = transform(scenarios);
        return d;
    }

    void validate() const {
        if (nuclides.empty() || stabilities.empty()) throw ValidationError("preprocessor has empty code maps");
        if (!std::is_sorted(nuclides.begin(), nuclides.end()) ||
            std::adjacent_find(nuclides.begin(), nuclides.end()) != nuclides.end()) {
            throw ValidationError("preprocessor nuclide codes must be sorted and unique");
        }
        if (!std::is_sorted(stabilities.begin(), stabilities.end()) ||
            std::adjacent_find(stabilities.begin(), stabilities.end()) != stabilities.end()) {
            throw ValidationError("preprocessor stability codes must be sorted and unique");
        }
        if (!(height_min < height_max) || !(distance_min < distance_max)) {
            throw ValidationError("preprocessor needs min < max for height and distance");
        }
    }
};

inline Preprocessor fit_preprocessor(const DoseTable& train) {
    if (train.empty()) throw ValidationError("cannot fit a preprocessor on an empty table");
    Preprocessor p;
    std::set<std::string> names;
    std::set<StabilityClass> classes;
    p.height_min = p.height_max = train.rows.front().scenario.height;
    p.distance_min = p.distance_max = train.rows.front().scenario.distance;
    for (const auto& r : train.rows) {
        names.insert(r.scenario.nuclide);
        classes.insert(r.scenario.stability);
        p.height_min = std::min(p.height_min, r.scenario.height);
        p.height_max = std::max(p.height_max, r.scenario.height);
        p.distance_min = std::min(p.distance_min, r.scenario.distance);
        p.distance_max = std::max(p.distance_max, r.scenario.distance);
        p.target(r.dose);
    }
    p.nuclides.assign(names.begin(), names.end());
    p.stabilities.assign(classes.begin(), classes.end());
    p.validate();
    return p;
}

/// Sample skewness (population moments), used to report the effect of the
/// log transform.
inline double skewness(const std::vector<double>& v) {
    if (v.size() < 2) throw ValidationError("skewness needs at least 2 values");
    double mean = 0.0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double m2 = 0.0, m3 = 0.0;
    for (const double x : v) {
        const double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(v.size());
    m3 /= static_cast<double>(v.size());
    if (m2 == 0.0) return 0.0;
    return m3 / std::pow(m2, 1.5);
}

}  // namespace plumeshine

#endif
