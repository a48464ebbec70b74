#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "plumeshine/ensemble.hpp"
#include "support/fixtures.hpp"

using namespace plumeshine;

namespace {

struct Toy {
    FeatureMatrix X;
    std::vector<double> y;
};

Toy toy(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Toy t;
    t.X.rows = n;
    t.X.cols = kNumFeatures;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::floor(u(gen) * 3), b = std::floor(u(gen) * 6), c = u(gen), d = u(gen);
        t.X.data.insert(t.X.data.end(), {a, b, c, d});
        t.y.push_back(-9.0 + 0.3 * a - 0.1 * b + std::sin(4 * c) - 2.0 * d);
    }
    return t;
}

// Replaces the trailing checksum so structural checks are reached.
std::string reseal(const std::string& content) {
    const auto body = content.substr(0, content.rfind("checksum "));
    return body + "checksum " + text::hex64(text::fnv1a64(body)) + "\n";
}

const Model& trained(ModelFamily f) {
    static const auto train = fixtures::synthetic(20);
    static const Model forest = [] {
        ForestParams fp;
        fp.n_estimators = 12;
        return train_model(ModelFamily::forest, train, fp, BoostedParams{}, 7);
    }();
    static const Model boosted = [] {
        BoostedParams bp;
        bp.rounds = 40;
        return train_model(ModelFamily::boosted, train, ForestParams{}, bp, 7);
    }();
    return f == ModelFamily::forest ? forest : boosted;
}

}  // namespace

TEST(Forest, SingleTreeWithoutBootstrapIsAPlainTree) {
    const auto d = toy(150, 1);
    ForestParams p;
    p.n_estimators = 1;
    p.bootstrap = false;
    const auto m = fit_forest(d.X, d.y, p, 5);
    Rng rng(derive_seed(5, 0));
    const auto t = fit_tree(d.X, d.y, TreeParams{p.max_depth, 1, 1.0}, rng);
    for (std::size_t i = 0; i < d.X.rows; ++i) EXPECT_EQ(m.predict_selected(d.X.row(i)), t.predict(d.X.row(i)));
}

TEST(Forest, AveragesTreesAndIgnoresJobs) {
    const auto d = toy(300, 2);
    ForestParams p;
    p.n_estimators = 9;
    const auto a = fit_forest(d.X, d.y, p, 5, 1);
    const auto b = fit_forest(d.X, d.y, p, 5, 4);
    ASSERT_EQ(a.trees.size(), 9u);
    for (std::size_t i = 0; i < d.X.rows; ++i) {
        double s = 0;
        for (const auto& t : a.trees) s += t.predict(d.X.row(i));
        EXPECT_DOUBLE_EQ(a.predict_selected(d.X.row(i)), s / 9.0);
        EXPECT_EQ(a.predict_selected(d.X.row(i)), b.predict_selected(d.X.row(i)));
    }
    const auto c = fit_forest(d.X, d.y, p, 6, 1);
    EXPECT_NE(save_model(a), save_model(c));
    p.n_estimators = 0;
    EXPECT_THROW(fit_forest(d.X, d.y, p, 5), ValidationError);
}

TEST(Boosted, OneFullRoundStepsTowardTheTarget) {
    const auto d = toy(100, 3);
    BoostedParams p;
    p.rounds = 1;
    p.subsample = 1.0;
    p.max_depth = 64;
    const auto m = fit_boosted(d.X, d.y, d.X, d.y, p, 1);
    const double base = std::accumulate(d.y.begin(), d.y.end(), 0.0) / 100.0;
    EXPECT_DOUBLE_EQ(m.base_score, base);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_NEAR(m.predict_selected(d.X.row(i)), base + 0.05 * (d.y[i] - base), 1e-12);
    }
}

TEST(Boosted, EarlyStoppingKeepsBestPrefix) {
    const auto d = toy(400, 4);
    const auto v = toy(60, 5);
    BoostedParams p;
    p.rounds = 60;
    const auto m = fit_boosted(d.X, d.y, v.X, v.y, p, 9);
    EXPECT_EQ(m.trees.size(), m.best_round + 1);
    const auto best = std::min_element(m.val_rmse.begin(), m.val_rmse.end());
    EXPECT_EQ(static_cast<std::size_t>(best - m.val_rmse.begin()), m.best_round);
    EXPECT_LT(m.val_rmse.back(), m.val_rmse.front());

    // With no learning the score never improves after round 0.
    p.learning_rate = 0.0;
    p.early_stopping_rounds = 3;
    const auto flat = fit_boosted(d.X, d.y, v.X, v.y, p, 9);
    EXPECT_EQ(flat.val_rmse.size(), 4u);
    EXPECT_EQ(flat.best_round, 0u);
    EXPECT_EQ(flat.trees.size(), 1u);

    BoostedParams bad;
    bad.subsample = 0.0;
    EXPECT_THROW(fit_boosted(d.X, d.y, v.X, v.y, bad, 1), ValidationError);
    EXPECT_THROW(fit_boosted(d.X, d.y, FeatureMatrix{}, {}, BoostedParams{}, 1), ValidationError);
}

TEST(Boosted, ColumnSamplingIsSeeded) {
    const auto d = toy(200, 6);
    BoostedParams p;
    p.rounds = 5;
    p.colsample_bytree = 0.5;
    const auto a = fit_boosted(d.X, d.y, d.X, d.y, p, 2);
    const auto b = fit_boosted(d.X, d.y, d.X, d.y, p, 2);
    EXPECT_EQ(save_model(a), save_model(b));
}

TEST(TrainModel, FitsSyntheticField) {
    const auto test = fixtures::synthetic(33);
    for (const auto f : {ModelFamily::forest, ModelFamily::boosted}) {
        const auto& m = trained(f);
        EXPECT_EQ(m.family, f);
        double worst = 0;
        for (const auto& r : test.rows) {
            worst = std::max(worst, std::abs(std::log10(predict_dose(m, r.scenario) / r.dose)));
        }
        EXPECT_LT(worst, f == ModelFamily::forest ? 0.4 : 0.6) << to_string(f);
    }
    EXPECT_LT(trained(ModelFamily::boosted).best_round, 40u);
    EXPECT_THROW(predict_dose(trained(ModelFamily::forest), Scenario{"I-131", StabilityClass::A, 10.0, 100.0}),
                 DomainError);
}

TEST(TrainModel, FeatureSubsets) {
    const auto train = fixtures::synthetic(10);
    ForestParams fp;
    fp.n_estimators = 3;
    const auto m = train_model(ModelFamily::forest, train, fp, BoostedParams{}, 1, {kDistance, kHeight});
    EXPECT_EQ(m.features, (std::vector<std::size_t>{kHeight, kDistance}));
    for (const auto& t : m.trees) {
        for (const auto& n : t.nodes) EXPECT_LT(n.feature, 2);
    }
    EXPECT_THROW(train_model(ModelFamily::forest, train, fp, BoostedParams{}, 1, {}), ValidationError);
    EXPECT_THROW(train_model(ModelFamily::forest, train, fp, BoostedParams{}, 1, {0, 0}), ValidationError);
    EXPECT_THROW(train_model(ModelFamily::forest, train, fp, BoostedParams{}, 1, {4}), ValidationError);
    EXPECT_EQ(parse_family("boosted"), ModelFamily::boosted);
    EXPECT_THROW(parse_family("svm"), ValidationError);
}

TEST(ModelFile, RoundTripIsExact) {
    const auto test = fixtures::synthetic(33);
    for (const auto f : {ModelFamily::forest, ModelFamily::boosted}) {
        const auto& m = trained(f);
        const auto text = save_model(m);
        EXPECT_EQ(text.rfind("plumeshine-model 1\n", 0), 0u);
        const auto back = load_model(text);
        EXPECT_EQ(save_model(back), text);
        std::vector<Scenario> s;
        for (const auto& r : test.rows) s.push_back(r.scenario);
        EXPECT_EQ(predict_dose(back, s), predict_dose(m, s));
    }
}

TEST(ModelFile, RejectsDamage) {
    const auto text = save_model(trained(ModelFamily::forest));
    auto expect_format_error = [](const std::string& s, const std::string& what) {
        try {
            load_model(s);
            ADD_FAILURE() << "accepted: " << what;
        } catch (const ModelFormatError& e) {
            EXPECT_NE(std::string(e.what()).find(what), std::string::npos) << what << " -> " << e.what();
        }
    };
    auto flipped = text;
    flipped[text.size() / 2] = flipped[text.size() / 2] == '1' ? '2' : '1';
    expect_format_error(flipped, "checksum mismatch");
    expect_format_error(text.substr(0, text.size() / 2), "truncated");
    expect_format_error("", "truncated");

    auto version = text;
    version.replace(0, 18, "plumeshine-model 2");
    expect_format_error(reseal(version), "unsupported model version");
    auto magic = text;
    magic.replace(0, 10, "notamodel!");
    expect_format_error(reseal(magic), "not a model file");

    auto missing = text;
    const auto at = missing.find("base_score");
    missing.erase(at, missing.find('\n', at) - at + 1);
    expect_format_error(reseal(missing), "base_score");

    // Point the root's left child back at itself.
    auto cycle = text;
    const auto node = cycle.find('\n', cycle.find("tree 0 ")) + 1;
    const std::string root = cycle.substr(node, cycle.find('\n', node) - node);
    const auto fields = text::split_ws(root);
    const std::string bad = std::string(fields[0]) + " " + std::string(fields[1]) + " 0 " + std::string(fields[3]) + " " +
                            std::string(fields[4]);
    cycle.replace(node, cycle.find('\n', node) - node, bad);
    expect_format_error(reseal(cycle), "out of range");

    auto fewer = text;
    const auto trees_at = fewer.find("tree 1 ");
    fewer = fewer.substr(0, trees_at) + fewer.substr(fewer.rfind("checksum "));
    expect_format_error(reseal(fewer), "truncated in tree list");
}
