#ifndef PLUMESHINE_ENSEMBLE_HPP
#define PLUMESHINE_ENSEMBLE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "plumeshine/dataset.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/parallel.hpp"
#include "plumeshine/random.hpp"
#include "plumeshine/text.hpp"
#include "plumeshine/tree.hpp"

namespace plumeshine {

enum class ModelFamily { forest, boosted };

inline std::string to_string(ModelFamily f) { return f == ModelFamily::forest ? "forest" : "boosted"; }

inline ModelFamily parse_family(std::string_view s) {
    if (s == "forest") return ModelFamily::forest;
    if (s == "boosted") return ModelFamily::boosted;
    throw ValidationError("model family must be 'forest' or 'boosted', got '" + std::string(s) + "'");
}

struct ForestParams {
    std::size_t n_estimators = 60;
    std::size_t max_depth = 15;
    double max_features = 1.0;
    bool bootstrap = true;
    std::size_t min_samples_leaf = 1;

    void validate() const {
        if (n_estimators < 1) throw ValidationError("forest needs at least one tree");
        if (!(max_features > 0.0 && max_features <= 1.0)) throw ValidationError("max_features must lie in (0, 1]");
        if (min_samples_leaf < 1) throw ValidationError("min_samples_leaf must be >= 1");
    }
};

struct BoostedParams {
    double learning_rate = 0.05;
    std::size_t max_depth = 30;
    double subsample = 0.5;
    double colsample_bytree = 1.0;
    std::size_t rounds = 100;
    std::size_t early_stopping_rounds = 10;
    double validation_fraction = 0.1;  ///< carved from the training rows by train_model
    std::size_t min_samples_leaf = 1;

    void validate() const {
        if (!(learning_rate >= 0.0 && learning_rate <= 1.0)) throw ValidationError("learning_rate must lie in [0, 1]");
        if (!(subsample > 0.0 && subsample <= 1.0)) throw ValidationError("subsample must lie in (0, 1]");
        if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0)) {
            throw ValidationError("colsample_bytree must lie in (0, 1]");
        }
        if (rounds < 1) throw ValidationError("rounds must be >= 1");
        if (early_stopping_rounds < 1) throw ValidationError("early_stopping_rounds must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
            throw ValidationError("validation_fraction must lie in (0, 0.5)");
        }
        if (min_samples_leaf < 1) throw ValidationError("min_samples_leaf must be >= 1");
    }
};

/// Trained forest or boosted ensemble together with its preprocessing.
/// `features` lists the preprocessor columns the trees were trained on, in
/// order; tree feature indices refer to positions in this list.
struct Model {
    ModelFamily family = ModelFamily::boosted;
    std::uint64_t seed = 3007;
    ForestParams forest;
    BoostedParams boosted;
    Preprocessor pre;
    std::vector<std::size_t> features{kRadionuclide, kStability, kHeight, kDistance};
    double base_score = 0.0;
    std::vector<RegressionTree> trees;
    std::size_t best_round = 0;    ///< boosted: argmin of val_rmse
    std::vector<double> val_rmse;  ///< boosted: validation RMSE after each round

    /// Log-space prediction for one preprocessed row with all kNumFeatures columns.
    double predict_row(const double* full) const {
        std::array<double, kNumFeatures> x{};
        for (std::size_t j = 0; j < features.size(); ++j) x[j] = full[features[j]];
        return predict_selected(x.data());
    }

    /// Prediction for a row that already holds only the `features` columns.
    double predict_selected(const double* x) const {
        if (family == ModelFamily::forest) {
            double s = 0.0;
            for (const auto& t : trees) s += t.predict(x);
            return s / static_cast<double>(trees.size());
        }
        double f = base_score;
        for (const auto& t : trees) f += boosted.learning_rate * t.predict(x);
        return f;
    }
};

inline std::vector<double> predict(const Model& m, const FeatureMatrix& X) {
    if (X.cols != kNumFeatures) throw ValidationError("predict expects preprocessed rows with 4 columns");
    if (m.trees.empty()) throw ValidationError("model has no trees");
    std::vector<double> out(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) out[i] = m.predict_row(X.row(i));
    return out;
}

inline std::vector<double> predict_dose(const Model& m, const std::vector<Scenario>& scenarios) {
    return m.pre.inverse_target(predict(m, m.pre.transform(scenarios)));
}

inline double predict_dose(const Model& m, const Scenario& s) { return predict_dose(m, std::vector{s}).front(); }

namespace detail {

inline void check_training_data(const FeatureMatrix& X, const std::vector<double>& y) {
    if (X.rows == 0) throw ValidationError("training set is empty");
    if (y.size() != X.rows) throw ValidationError("target length differs from feature rows");
}

}  // namespace detail

/// Bagged trees; tree t draws its bootstrap sample from its own stream
/// derive_seed(seed, t), so results do not depend on `jobs`.
inline Model fit_forest(const FeatureMatrix& X, const std::vector<double>& y, const ForestParams& params,
                        std::uint64_t seed, std::size_t jobs = 1) {
    params.validate();
    detail::check_training_data(X, y);
    const auto binned = BinnedFeatures::build(X);
    const TreeParams tp{params.max_depth, params.min_samples_leaf, params.max_features};
    Model m;
    m.family = ModelFamily::forest;
    m.seed = seed;
    m.forest = params;
    m.trees.resize(params.n_estimators);
    parallel_for(params.n_estimators, jobs, [&](std::size_t t) {
        Rng rng(derive_seed(seed, t));
        std::vector<std::size_t> sample(X.rows);
        if (params.bootstrap) {
            for (auto& s : sample) s = static_cast<std::size_t>(rng.below(X.rows));
        } else {
            std::iota(sample.begin(), sample.end(), std::size_t{0});
        }
        m.trees[t] = fit_tree(binned, y, std::move(sample), tp, rng);
    });
    return m;
}

inline double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

/// Gradient boosting on squared error. Round k fits a tree to the current
/// residuals over a subsample drawn from derive_seed(seed, k); training stops
/// once validation RMSE has not improved for early_stopping_rounds and the
/// best-round prefix is kept.
inline Model fit_boosted(const FeatureMatrix& X, const std::vector<double>& y, const FeatureMatrix& X_val,
                         const std::vector<double>& y_val, const BoostedParams& params, std::uint64_t seed) {
    params.validate();
    detail::check_training_data(X, y);
    if (X_val.rows == 0) throw ValidationError("boosting needs a non-empty validation set");
    if (y_val.size() != X_val.rows || X_val.cols != X.cols) throw ValidationError("validation set shape mismatch");
    const auto binned = BinnedFeatures::build(X);
    const TreeParams tp{params.max_depth, params.min_samples_leaf, 1.0};

    Model m;
    m.family = ModelFamily::boosted;
    m.seed = seed;
    m.boosted = params;
    m.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

    std::vector<double> f_train(X.rows, m.base_score), f_val(X_val.rows, m.base_score);
    std::vector<double> residual(X.rows);
    const auto n_sub = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(X.rows))));
    const auto n_cols = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(params.colsample_bytree * static_cast<double>(X.cols))));
    double best = std::numeric_limits<double>::infinity();

    for (std::size_t k = 0; k < params.rounds; ++k) {
        Rng rng(derive_seed(seed, k));
        std::vector<std::size_t> sample(X.rows);
        std::iota(sample.begin(), sample.end(), std::size_t{0});
        if (n_sub < X.rows) {
            for (std::size_t i = 0; i < n_sub; ++i) {
                std::swap(sample[i], sample[i + static_cast<std::size_t>(rng.below(X.rows - i))]);
            }
            sample.resize(n_sub);
            std::sort(sample.begin(), sample.end());
        }
        std::vector<std::size_t> cols(X.cols);
        std::iota(cols.begin(), cols.end(), std::size_t{0});
        if (n_cols < X.cols) {
            for (std::size_t i = 0; i < n_cols; ++i) {
                std::swap(cols[i], cols[i + static_cast<std::size_t>(rng.below(X.cols - i))]);
            }
            cols.resize(n_cols);
            std::sort(cols.begin(), cols.end());
        }
        for (std::size_t i = 0; i < X.rows; ++i) residual[i] = y[i] - f_train[i];
        auto tree = fit_tree(binned, residual, std::move(sample), tp, rng, cols);
        for (std::size_t i = 0; i < X.rows; ++i) f_train[i] += params.learning_rate * tree.predict(X.row(i));
        for (std::size_t i = 0; i < X_val.rows; ++i) f_val[i] += params.learning_rate * tree.predict(X_val.row(i));
        m.trees.push_back(std::move(tree));
        const double score = rmse(f_val, y_val);
        m.val_rmse.push_back(score);
        if (score < best) {
            best = score;
            m.best_round = k;
        } else if (k - m.best_round >= params.early_stopping_rounds) {
            break;
        }
    }
    m.trees.resize(m.best_round + 1);
    return m;
}

/// Fits a preprocessor on `train`, restricts to `features`, and trains the
/// requested family. Boosting holds out a seeded validation_fraction of the
/// training rows for early stopping.
inline Model train_model(ModelFamily family, const DoseTable& train, const ForestParams& fp,
                         const BoostedParams& bp, std::uint64_t seed,
                         std::vector<std::size_t> features = {kRadionuclide, kStability, kHeight, kDistance},
                         std::size_t jobs = 1) {
    if (features.empty()) throw ValidationError("at least one feature is required");
    std::sort(features.begin(), features.end());
    if (std::adjacent_find(features.begin(), features.end()) != features.end() || features.back() >= kNumFeatures) {
        throw ValidationError("feature indices must be distinct and < 4");
    }
    const auto pre = fit_preprocessor(train);
    auto data = pre.transform(train);
    const auto X = data.X.select(features);
    Model m;
    if (family == ModelFamily::forest) {
        m = fit_forest(X, data.y, fp, seed, jobs);
    } else {
        bp.validate();
        const auto n = X.rows;
        const auto n_val = static_cast<std::size_t>(std::llround(bp.validation_fraction * static_cast<double>(n)));
        if (n_val == 0 || n_val >= n) throw ValidationError("training set too small for a validation carve-out");
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(seed, "validation"));
        rng.shuffle(order);
        std::vector<std::size_t> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        std::vector<std::size_t> fit_ids(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        std::sort(val_ids.begin(), val_ids.end());
        std::sort(fit_ids.begin(), fit_ids.end());
        std::vector<double> y_fit, y_val;
        for (const auto i : fit_ids) y_fit.push_back(data.y[i]);
        for (const auto i : val_ids) y_val.push_back(data.y[i]);
        m = fit_boosted(X.subset(fit_ids), y_fit, X.subset(val_ids), y_val, bp, seed);
        m.forest = fp;
    }
    if (family == ModelFamily::forest) m.boosted = bp;
    m.pre = pre;
    m.features = features;
    return m;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::string_view kModelMagic = "plumeshine-model";
inline constexpr int kModelVersion = 1;

inline void save_model(const Model& m, std::ostream& out) {
    using text::format_double;
    std::ostringstream s;
    s << kModelMagic << ' ' << kModelVersion << '\n';
    text::KeyValue kv;
    kv.set("family", to_string(m.family));
    kv.set("seed", std::to_string(m.seed));
    std::string feats;
    for (const auto f : m.features) feats += (feats.empty() ? "" : ",") + std::string(kFeatureNames[f]);
    kv.set("features", feats);
    kv.set("forest.n_estimators", std::to_string(m.forest.n_estimators));
    kv.set("forest.max_depth", std::to_string(m.forest.max_depth));
    kv.set("forest.max_features", format_double(m.forest.max_features));
    kv.set("forest.bootstrap", m.forest.bootstrap ? "true" : "false");
    kv.set("forest.min_samples_leaf", std::to_string(m.forest.min_samples_leaf));
    kv.set("boosted.learning_rate", format_double(m.boosted.learning_rate));
    kv.set("boosted.max_depth", std::to_string(m.boosted.max_depth));
    kv.set("boosted.subsample", format_double(m.boosted.subsample));
    kv.set("boosted.colsample_bytree", format_double(m.boosted.colsample_bytree));
    kv.set("boosted.rounds", std::to_string(m.boosted.rounds));
    kv.set("boosted.early_stopping_rounds", std::to_string(m.boosted.early_stopping_rounds));
    kv.set("boosted.validation_fraction", format_double(m.boosted.validation_fraction));
    kv.set("boosted.min_samples_leaf", std::to_string(m.boosted.min_samples_leaf));
    std::string names;
    for (const auto& n : m.pre.nuclides) names += (names.empty() ? "" : ",") + n;
    kv.set("preprocessor.nuclides", names);
    std::string classes;
    for (const auto c : m.pre.stabilities) classes += (classes.empty() ? "" : ",") + to_string(c);
    kv.set("preprocessor.stabilities", classes);
    kv.set("preprocessor.height_min", format_double(m.pre.height_min));
    kv.set("preprocessor.height_max", format_double(m.pre.height_max));
    kv.set("preprocessor.distance_min", format_double(m.pre.distance_min));
    kv.set("preprocessor.distance_max", format_double(m.pre.distance_max));
    kv.set("preprocessor.log_target", m.pre.log_target ? "true" : "false");
    kv.set("base_score", format_double(m.base_score));
    kv.set("best_round", std::to_string(m.best_round));
    std::string trace;
    for (const double v : m.val_rmse) trace += (trace.empty() ? "" : ",") + format_double(v);
    kv.set("val_rmse", trace);
    kv.set("trees", std::to_string(m.trees.size()));
    kv.write(s);
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        s << "tree " << t << ' ' << m.trees[t].nodes.size() << '\n';
        for (const auto& n : m.trees[t].nodes) {
            s << n.feature << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
              << format_double(n.value) << '\n';
        }
    }
    const auto body = s.str();
    out << body << "checksum " << text::hex64(text::fnv1a64(body)) << '\n';
}

inline std::string save_model(const Model& m) {
    std::ostringstream out;
    save_model(m, out);
    return out.str();
}

namespace detail {

inline bool parse_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ModelFormatError("expected true/false, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v) {
    const auto r = text::parse_u64(v);
    if (!r) throw ModelFormatError("expected an unsigned integer, got '" + v + "'");
    return static_cast<std::size_t>(*r);
}

inline double parse_number(std::string_view v) {
    const auto r = text::parse_double(v);
    if (!r) throw ModelFormatError("expected a number, got '" + std::string(v) + "'");
    return *r;
}

}  // namespace detail

inline Model load_model(const std::string& content) {
    using detail::parse_number;
    using detail::parse_size;
    const auto tail = content.rfind("checksum ");
    if (tail == std::string::npos || (tail > 0 && content[tail - 1] != '\n')) {
        throw ModelFormatError("model file truncated: no checksum line");
    }
    const std::string body = content.substr(0, tail);
    const std::string stated(text::trim(std::string_view(content).substr(tail + 9)));
    if (stated != text::hex64(text::fnv1a64(body))) throw ModelFormatError("model checksum mismatch");

    std::istringstream in(body);
    std::string line;
    std::getline(in, line);
    const auto head = text::split_ws(line);
    if (head.size() != 2 || head[0] != kModelMagic) throw ModelFormatError("not a model file");
    if (head[1] != std::to_string(kModelVersion)) {
        throw ModelFormatError("unsupported model version " + std::string(head[1]));
    }
    std::string header;
    std::streampos trees_at = in.tellg();
    while (std::getline(in, line)) {
        if (line.rfind("tree ", 0) == 0) break;
        header += line + '\n';
        trees_at = in.tellg();
    }
    text::KeyValue kv;
    try {
        kv = text::KeyValue::parse(header);
    } catch (const Error& e) {
        throw ModelFormatError(std::string("bad model header: ") + e.what());
    }
    auto get = [&](const std::string& k) {
        if (!kv.has(k)) throw ModelFormatError("model header lacks '" + k + "'");
        return kv.get(k);
    };
    Model m;
    try {
        m.family = parse_family(get("family"));
        m.pre.stabilities.clear();
        for (const auto& c : kv.get_list("preprocessor.stabilities")) m.pre.stabilities.push_back(parse_stability(c));
        m.seed = parse_size(get("seed"));
        m.features.clear();
        for (const auto& name : kv.get_list("features")) {
            const auto it = std::find(kFeatureNames.begin(), kFeatureNames.end(), name);
            if (it == kFeatureNames.end()) throw ModelFormatError("unknown feature '" + name + "'");
            m.features.push_back(static_cast<std::size_t>(it - kFeatureNames.begin()));
        }
        m.forest.n_estimators = parse_size(get("forest.n_estimators"));
        m.forest.max_depth = parse_size(get("forest.max_depth"));
        m.forest.max_features = parse_number(get("forest.max_features"));
        m.forest.bootstrap = detail::parse_bool(get("forest.bootstrap"));
        m.forest.min_samples_leaf = parse_size(get("forest.min_samples_leaf"));
        m.boosted.learning_rate = parse_number(get("boosted.learning_rate"));
        m.boosted.max_depth = parse_size(get("boosted.max_depth"));
        m.boosted.subsample = parse_number(get("boosted.subsample"));
        m.boosted.colsample_bytree = parse_number(get("boosted.colsample_bytree"));
        m.boosted.rounds = parse_size(get("boosted.rounds"));
        m.boosted.early_stopping_rounds = parse_size(get("boosted.early_stopping_rounds"));
        m.boosted.validation_fraction = parse_number(get("boosted.validation_fraction"));
        m.boosted.min_samples_leaf = parse_size(get("boosted.min_samples_leaf"));
        m.pre.nuclides = kv.get_list("preprocessor.nuclides");
        m.pre.height_min = parse_number(get("preprocessor.height_min"));
        m.pre.height_max = parse_number(get("preprocessor.height_max"));
        m.pre.distance_min = parse_number(get("preprocessor.distance_min"));
        m.pre.distance_max = parse_number(get("preprocessor.distance_max"));
        m.pre.log_target = detail::parse_bool(get("preprocessor.log_target"));
        m.base_score = parse_number(get("base_score"));
        m.best_round = parse_size(get("best_round"));
        for (const auto& v : kv.get_list("val_rmse")) m.val_rmse.push_back(parse_number(v));
        m.pre.validate();
    } catch (const ValidationError& e) {
        throw ModelFormatError(e.what());
    }

    const auto n_trees = parse_size(get("trees"));
    in.clear();
    in.seekg(trees_at);
    for (std::size_t t = 0; t < n_trees; ++t) {
        if (!std::getline(in, line)) throw ModelFormatError("model file truncated in tree list");
        const auto th = text::split_ws(line);
        if (th.size() != 3 || th[0] != "tree" || parse_size(std::string(th[1])) != t) {
            throw ModelFormatError("malformed tree header '" + line + "'");
        }
        RegressionTree tree;
        const auto n_nodes = parse_size(std::string(th[2]));
        if (n_nodes == 0) throw ModelFormatError("tree with no nodes");
        tree.nodes.resize(n_nodes);
        for (std::size_t idx = 0; idx < n_nodes; ++idx) {
            auto& node = tree.nodes[idx];
            if (!std::getline(in, line)) throw ModelFormatError("model file truncated in tree " + std::to_string(t));
            const auto f = text::split_ws(line);
            if (f.size() != 5) throw ModelFormatError("malformed node line '" + line + "'");
            node.feature = static_cast<std::int32_t>(parse_number(f[0]));
            node.threshold = parse_number(f[1]);
            node.left = static_cast<std::int32_t>(parse_number(f[2]));
            node.right = static_cast<std::int32_t>(parse_number(f[3]));
            node.value = parse_number(f[4]);
            if (!node.is_leaf()) {
                const auto limit = static_cast<std::int32_t>(n_nodes);
                const auto self = static_cast<std::int32_t>(idx);
                if (node.feature >= static_cast<std::int32_t>(m.features.size()) || node.left <= self ||
                    node.right <= self || node.left >= limit || node.right >= limit) {
                    throw ModelFormatError("node references out of range in tree " + std::to_string(t));
                }
            }
        }
        m.trees.push_back(std::move(tree));
    }
    if (m.trees.empty()) throw ModelFormatError("model has no trees");
    return m;
}

inline void save_model_file(const Model& m, const std::filesystem::path& path) {
    write_text_file(path, save_model(m));
}

inline Model load_model_file(const std::filesystem::path& path) { return load_model(read_text_file(path)); }

}  // namespace plumeshine

#endif
