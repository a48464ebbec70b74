#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "plumeshine/tree.hpp"

using namespace plumeshine;

namespace {

FeatureMatrix matrix(std::size_t rows, std::size_t cols, const std::vector<double>& data) {
    FeatureMatrix X;
    X.rows = rows;
    X.cols = cols;
    X.data = data;
    return X;
}

struct BruteSplit {
    double sse = INFINITY;
    std::size_t feature = 0;
    double threshold = 0.0;
};

// Every feature, every midpoint, both sides' SSE computed from scratch.
BruteSplit brute_force_split(const FeatureMatrix& X, const std::vector<double>& y) {
    BruteSplit best;
    for (std::size_t f = 0; f < X.cols; ++f) {
        std::vector<double> v;
        for (std::size_t i = 0; i < X.rows; ++i) v.push_back(X.at(i, f));
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
            const double t = 0.5 * (v[k] + v[k + 1]);
            double sl = 0, sr = 0, nl = 0, nr = 0;
            for (std::size_t i = 0; i < X.rows; ++i) (X.at(i, f) <= t ? (sl += y[i], nl += 1) : (sr += y[i], nr += 1));
            double sse = 0;
            for (std::size_t i = 0; i < X.rows; ++i) {
                const double m = X.at(i, f) <= t ? sl / nl : sr / nr;
                sse += (y[i] - m) * (y[i] - m);
            }
            if (sse < best.sse - 1e-12) best = {sse, f, t};
        }
    }
    return best;
}

}  // namespace

TEST(Tree, RootSplitMatchesExhaustiveSearch) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 8 + trial % 30;
        std::vector<double> data, y;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = std::floor(u(gen) * 5), b = u(gen), c = std::round(u(gen) * 10) / 10;
            data.insert(data.end(), {a, b, c});
            y.push_back(std::sin(3 * b) + 0.5 * a - c * c + 0.1 * u(gen));
        }
        const auto X = matrix(n, 3, data);
        Rng rng(1);
        const auto t = fit_tree(X, y, TreeParams{1, 1, 1.0}, rng);
        const auto oracle = brute_force_split(X, y);
        ASSERT_EQ(t.nodes.size(), 3u);
        EXPECT_EQ(static_cast<std::size_t>(t.nodes[0].feature), oracle.feature) << trial;
        EXPECT_DOUBLE_EQ(t.nodes[0].threshold, oracle.threshold) << trial;
        double sse = 0;
        for (std::size_t i = 0; i < n; ++i) sse += std::pow(y[i] - t.predict(X.row(i)), 2);
        EXPECT_NEAR(sse, oracle.sse, 1e-9) << trial;
    }
}

TEST(Tree, StepFunctionAndInterpolation) {
    std::vector<double> data, y;
    for (int i = 0; i < 20; ++i) {
        data.push_back(i);
        y.push_back(i < 7 ? 1.0 : 4.0);
    }
    Rng rng(1);
    const auto step = fit_tree(matrix(20, 1, data), y, TreeParams{}, rng);
    EXPECT_EQ(step.nodes.size(), 3u);
    EXPECT_EQ(step.nodes[0].threshold, 6.5);
    EXPECT_EQ(step.depth(), 1u);
    EXPECT_EQ(step.leaf_count(), 2u);

    for (int i = 0; i < 20; ++i) y[i] = std::sin(i * 0.7);
    const auto X = matrix(20, 1, data);
    const auto full = fit_tree(X, y, TreeParams{50, 1, 1.0}, rng);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(full.predict(X.row(i)), y[i]);
    EXPECT_EQ(full.leaf_count(), 20u);
    const double between = 6.5;
    EXPECT_EQ(full.predict(&between), y[6]);  // ties go left
}

TEST(Tree, DepthAndLeafSizeLimits) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> data, y;
    for (int i = 0; i < 300; ++i) {
        data.insert(data.end(), {u(gen), u(gen)});
        y.push_back(u(gen));
    }
    const auto X = matrix(300, 2, data);
    Rng rng(1);
    for (std::size_t d : {0u, 1u, 3u, 6u}) EXPECT_LE(fit_tree(X, y, TreeParams{d, 1, 1.0}, rng).depth(), d);
    EXPECT_EQ(fit_tree(X, y, TreeParams{0, 1, 1.0}, rng).nodes.size(), 1u);

    const std::size_t leaf = 17;
    const auto t = fit_tree(X, y, TreeParams{40, leaf, 1.0}, rng);
    std::vector<int> hits(t.nodes.size(), 0);
    for (std::size_t i = 0; i < 300; ++i) {
        std::size_t k = 0;
        while (!t.nodes[k].is_leaf()) k = X.at(i, t.nodes[k].feature) <= t.nodes[k].threshold ? t.nodes[k].left : t.nodes[k].right;
        ++hits[k];
    }
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
        if (t.nodes[k].is_leaf()) {
            EXPECT_GE(hits[k], static_cast<int>(leaf));
        }
    }
}

TEST(Tree, ConstantTargetIsOneLeaf) {
    Rng rng(1);
    const auto t = fit_tree(matrix(4, 1, {1, 2, 3, 4}), {2.5, 2.5, 2.5, 2.5}, TreeParams{}, rng);
    EXPECT_EQ(t.nodes.size(), 1u);
    EXPECT_EQ(t.nodes[0].value, 2.5);
    const auto dup = fit_tree(matrix(4, 1, {1, 1, 1, 1}), {1.0, 2.0, 3.0, 4.0}, TreeParams{}, rng);
    EXPECT_EQ(dup.nodes.size(), 1u);
    EXPECT_EQ(dup.nodes[0].value, 2.5);
}

TEST(Tree, RepeatedSampleRowsWeighTheMean) {
    const auto X = matrix(2, 1, {0.0, 1.0});
    const auto b = BinnedFeatures::build(X);
    Rng rng(1);
    const auto t = fit_tree(b, {0.0, 3.0}, {0, 1, 1}, TreeParams{0, 1, 1.0}, rng);
    EXPECT_EQ(t.nodes[0].value, 2.0);
}

TEST(Tree, FeatureSubsamplingIsSeeded) {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> data, y;
    for (int i = 0; i < 200; ++i) {
        data.insert(data.end(), {u(gen), u(gen), u(gen), u(gen)});
        y.push_back(data[data.size() - 4] + 2 * data[data.size() - 1]);
    }
    const auto X = matrix(200, 4, data);
    auto grow = [&](std::uint64_t seed) {
        Rng rng(seed);
        return fit_tree(X, y, TreeParams{8, 1, 0.5}, rng);
    };
    const auto a = grow(3), b = grow(3), c = grow(4);
    ASSERT_EQ(a.nodes.size(), b.nodes.size());
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        EXPECT_EQ(a.nodes[i].feature, b.nodes[i].feature);
        EXPECT_EQ(a.nodes[i].threshold, b.nodes[i].threshold);
    }
    bool differs = a.nodes.size() != c.nodes.size();
    for (std::size_t i = 0; !differs && i < a.nodes.size(); ++i) differs = a.nodes[i].threshold != c.nodes[i].threshold;
    EXPECT_TRUE(differs);

    const auto b2 = BinnedFeatures::build(X);
    Rng rng(1);
    std::vector<std::size_t> all(200);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto only = fit_tree(b2, y, all, TreeParams{8, 1, 1.0}, rng, {1, 2});
    for (const auto& n : only.nodes) {
        if (!n.is_leaf()) {
            EXPECT_TRUE(n.feature == 1 || n.feature == 2);
        }
    }
}

TEST(Tree, Errors) {
    Rng rng(1);
    const auto X = matrix(2, 1, {0.0, 1.0});
    EXPECT_THROW(fit_tree(matrix(0, 1, {}), {}, TreeParams{}, rng), ValidationError);
    EXPECT_THROW(fit_tree(X, {1.0}, TreeParams{}, rng), ValidationError);
    EXPECT_THROW(fit_tree(X, {1.0, NAN}, TreeParams{}, rng), DomainError);
    EXPECT_THROW(fit_tree(X, {1.0, 2.0}, TreeParams{3, 0, 1.0}, rng), ValidationError);
    EXPECT_THROW(fit_tree(X, {1.0, 2.0}, TreeParams{3, 1, 0.0}, rng), ValidationError);
    EXPECT_THROW(fit_tree(X, {1.0, 2.0}, TreeParams{3, 1, 1.5}, rng), ValidationError);
    EXPECT_THROW(BinnedFeatures::build(matrix(1, 1, {INFINITY})), DomainError);
}
