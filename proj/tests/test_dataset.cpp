#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "plumeshine/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace plumeshine;
namespace fs = std::filesystem;

namespace {

const NuclideDB& db() {
    static const NuclideDB d = load_default_db();
    return d;
}

using fixtures::csv;
using fixtures::synthetic;

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("plumeshine_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Random, EngineAndStreams) {
    Rng r(5489);
    EXPECT_EQ(r.next(), 14514284786278117030ULL);  // reference mt19937_64 output
    std::set<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 1000; ++s) seeds.insert(derive_seed(3007, s));
    EXPECT_EQ(seeds.size(), 1000u);
    EXPECT_NE(derive_seed(3007, "lowres"), derive_seed(3007, "highres"));
    EXPECT_NE(derive_seed(1, 0), derive_seed(0, 1));
    EXPECT_EQ(derive_seed(3007, "lowres"), derive_seed(3007, "lowres"));

    Rng a(42), b(42);
    std::array<int, 7> counts{};
    for (int i = 0; i < 70000; ++i) {
        const auto v = a.below(7);
        ASSERT_EQ(v, b.below(7));
        ++counts[v];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    a.shuffle(w);
    EXPECT_NE(w, v);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(w, v);
}

TEST(Grids, Spacing) {
    const auto d = Grid::default_distances();
    ASSERT_EQ(d.size(), 45u);
    EXPECT_EQ(d.front(), 25.0);
    EXPECT_EQ(d.back(), 2000.0);
    for (std::size_t i = 2; i < d.size(); ++i) EXPECT_NEAR(d[i] / d[i - 1], d[1] / d[0], 1e-12);
    const auto h = Grid::default_heights();
    ASSERT_EQ(h.size(), 20u);
    EXPECT_EQ(h[0], 10.0);
    EXPECT_EQ(h[19], 200.0);
    EXPECT_NEAR(h[1], 20.0, 1e-12);
    EXPECT_THROW(log_spaced(0.0, 1.0, 3), ValidationError);
    EXPECT_THROW(linear_spaced(1.0, 1.0, 3), ValidationError);

    Grid g{{"Cs-137"}, {StabilityClass::A}, {5.0}, {100.0}};
    EXPECT_THROW(g.validate(), ValidationError);
    g.heights = {10.0};
    g.distances = {3000.0};
    EXPECT_THROW(g.validate(), ValidationError);
    g.distances = {};
    EXPECT_THROW(g.validate(), ValidationError);
}

TEST(GenerateLowres, SinglePointEqualsDoseRate) {
    const Grid g{{"cs137"}, {StabilityClass::D}, {50.0}, {400.0}};
    const auto t = generate_lowres(db(), g);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.rows[0].scenario.nuclide, "Cs-137");
    const double d = dose_rate(db(), db().at("Cs-137"), ReleaseSpec{1.0, 1.0, 50.0, StabilityClass::D},
                               Receptor{400.0, 0.0, 1.0});
    EXPECT_EQ(t.rows[0].dose, persisted(d));
    EXPECT_EQ(t.meta.get("kernel_config_hash"), KernelConfig{}.hash());
    EXPECT_EQ(t.provenance, Provenance::lowres);
}

TEST(GenerateLowres, SmallGridCountAndOrder) {
    const Grid g{{"Xe-135", "Co-60"}, {StabilityClass::F, StabilityClass::B}, {100.0, 20.0}, {900.0, 30.0, 200.0}};
    const auto t = generate_lowres(db(), g, {}, 2);
    ASSERT_EQ(t.size(), 24u);
    for (const auto& r : t.rows) EXPECT_GT(r.dose, 0.0);
    auto sorted = t;
    sorted.sort();
    EXPECT_EQ(csv(sorted), csv(t));
    EXPECT_EQ(csv(generate_lowres(db(), g, {}, 1)), csv(t));
}

TEST(GenerateLowres, ErrorsNameTheScenario) {
    KernelConfig starved;
    starved.max_intervals = 2;
    starved.rel_tol = 1e-6;
    const Grid g{{"Cs-137"}, {StabilityClass::D}, {50.0}, {100.0}};
    try {
        generate_lowres(db(), g, starved);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "QuadratureError");
        EXPECT_NE(std::string(e.what()).find("Cs-137 class D H=50 m x=100 m"), std::string::npos) << e.what();
    }
    const Grid unknown{{"Pu-239"}, {StabilityClass::D}, {50.0}, {100.0}};
    EXPECT_THROW(generate_lowres(db(), unknown), DomainError);
}

TEST(Csv, RoundTripAndErrors) {
    const auto t = synthetic(5);
    std::istringstream in(csv(t));
    const auto back = read_csv(in, Provenance::lowres);
    ASSERT_EQ(back.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(back.rows[i].scenario, t.rows[i].scenario);
        EXPECT_EQ(back.rows[i].dose, t.rows[i].dose);
    }
    auto parse = [](const std::string& s) {
        std::istringstream i(s);
        return read_csv(i, Provenance::lowres);
    };
    const std::string header = std::string(kCsvHeader) + "\n";
    EXPECT_THROW(parse(""), ParseError);
    EXPECT_THROW(parse("a,b\n"), ParseError);
    EXPECT_THROW(parse(header + "Cs-137,D,10,25\n"), ParseError);
    EXPECT_THROW(parse(header + "Cs-137,D,10,25,1e-9,3\n"), ParseError);
    EXPECT_THROW(parse(header + "Cs-137,Q,10,25,1e-9\n"), ParseError);
    EXPECT_THROW(parse(header + "Cs-137,D,10,25,-1e-9\n"), ParseError);
    EXPECT_THROW(parse(header + "Cs-137,D,x,25,1e-9\n"), ParseError);
    EXPECT_EQ(parse(header + "Cs-137,D,10,25,1.5e-9\n").rows[0].dose, 1.5e-9);
}

TEST(Csv, SaveLoadWithSidecar) {
    const auto dir = temp_dir("csv");
    auto t = densify(synthetic(5), 20, true);
    save_table(t, dir / "hr.csv");
    ASSERT_TRUE(fs::exists(dir / "hr.meta"));
    const auto back = load_table(dir / "hr.csv");
    EXPECT_EQ(back.provenance, Provenance::highres_interp);
    EXPECT_EQ(back.meta.get("rows"), std::to_string(t.size()));
    EXPECT_EQ(csv(back), csv(t));
    EXPECT_THROW(load_table(dir / "missing.csv"), IoError);
    fs::remove_all(dir);
}

TEST(Densify, GridShapeAndKnotDropping) {
    const auto lr = synthetic(45);
    const auto hr = densify(lr, 2000, true, 3);
    const auto groups = group_rows(lr);
    EXPECT_EQ(hr.provenance, Provenance::highres_interp);
    EXPECT_GE(hr.size(), groups.size() * 1998);
    EXPECT_LE(hr.size(), groups.size() * 1998 + groups.size() * 43);
    const auto knots = lr.keys();
    for (const auto& r : hr.rows) {
        const auto it = knots.lower_bound(Scenario{r.scenario.nuclide, r.scenario.stability, r.scenario.height, 0.0});
        for (auto k = it; k != knots.end() && k->nuclide == r.scenario.nuclide && k->height == r.scenario.height &&
                          k->stability == r.scenario.stability;
             ++k) {
            ASSERT_GT(std::abs(k->distance - r.scenario.distance), kKnotTolerance);
        }
    }
    EXPECT_EQ(csv(densify(lr, 2000, true, 1)), csv(hr));
}

TEST(Densify, EndpointsAndKnotReproduction) {
    const auto lr = synthetic(45);
    const auto ends = densify(lr, 2, false);
    ASSERT_EQ(ends.size(), 2 * group_rows(lr).size());
    const auto keys = lr.keys();
    std::map<Scenario, double> dose;
    for (const auto& r : lr.rows) dose[r.scenario] = r.dose;
    for (const auto& r : ends.rows) {
        ASSERT_TRUE(keys.count(r.scenario));
        EXPECT_LT(std::abs(r.dose / dose[r.scenario] - 1.0), 1e-12);
    }

    // Knots on a uniform grid are hit exactly by the dense grid.
    DoseTable even;
    for (int i = 0; i < 5; ++i) even.rows.push_back({{"Cs-137", StabilityClass::C, 50.0, 25.0 + 100.0 * i}, persisted(1e-9 / (1 + i * i))});
    const auto dense = densify(even, 9, false);
    ASSERT_EQ(dense.size(), 9u);
    for (int i = 0; i < 5; ++i) EXPECT_LT(std::abs(dense.rows[2 * i].dose / even.rows[i].dose - 1.0), 1e-12);
    EXPECT_EQ(densify(even, 9, true).size(), 4u);
}

TEST(Densify, StaysBetweenBracketingKnots) {
    const auto lr = synthetic(45);
    const auto hr = densify(lr, 500, true);
    std::map<std::tuple<std::string, StabilityClass, double>, std::vector<DoseRow>> by_group;
    for (const auto& g : group_rows(lr)) {
        const auto& s = g.front().scenario;
        by_group[{s.nuclide, s.stability, s.height}] = g;
    }
    for (const auto& r : hr.rows) {
        const auto& knots = by_group.at({r.scenario.nuclide, r.scenario.stability, r.scenario.height});
        std::size_t k = 0;
        while (knots[k + 1].scenario.distance < r.scenario.distance) ++k;
        const double lo = std::min(knots[k].dose, knots[k + 1].dose);
        const double hi = std::max(knots[k].dose, knots[k + 1].dose);
        ASSERT_GE(r.dose, lo * (1.0 - 1e-8));
        ASSERT_LE(r.dose, hi * (1.0 + 1e-8));
    }
}

TEST(Densify, Errors) {
    DoseTable t;
    t.rows.push_back({{"Cs-137", StabilityClass::A, 10.0, 100.0}, 1e-9});
    EXPECT_THROW(densify(t, 10, true), DomainError);
    EXPECT_THROW(densify(synthetic(5), 1, true), ValidationError);
}

TEST(Split, SizesDeterminismAndPartition) {
    DoseTable t;
    for (int i = 0; i < 100; ++i) t.rows.push_back({{"Cs-137", StabilityClass::A, 10.0, 25.0 + i}, 1e-9 + i * 1e-11});
    const auto [train, test] = split(t, 0.01, 7);
    EXPECT_EQ(train.size(), 99u);
    EXPECT_EQ(test.size(), 1u);

    const auto lr = synthetic(45);
    const auto [a_train, a_test] = split(lr, 0.1, 3007);
    const auto [b_train, b_test] = split(lr, 0.1, 3007);
    EXPECT_EQ(csv(a_train), csv(b_train));
    EXPECT_EQ(csv(a_test), csv(b_test));
    EXPECT_EQ(a_test.size(), static_cast<std::size_t>(std::llround(0.1 * lr.size())));
    const auto [c_train, c_test] = split(lr, 0.1, 3008);
    EXPECT_NE(csv(a_test), csv(c_test));

    DoseTable both = a_train;
    both.rows.insert(both.rows.end(), a_test.rows.begin(), a_test.rows.end());
    both.sort();
    EXPECT_EQ(csv(both), csv(lr));
    for (const auto& k : a_test.keys()) EXPECT_EQ(a_train.keys().count(k), 0u);
    EXPECT_EQ(a_test.meta.get("split_side"), "test");
    EXPECT_EQ(a_train.meta.get("split_seed"), "3007");
}

TEST(Split, Errors) {
    DoseTable t;
    EXPECT_THROW(split(t, 0.1, 1), ValidationError);
    for (int i = 0; i < 10; ++i) t.rows.push_back({{"Cs-137", StabilityClass::A, 10.0, 25.0 + i}, 1e-9});
    EXPECT_THROW(split(t, 0.01, 1), ValidationError);
    EXPECT_THROW(split(t, 0.0, 1), ValidationError);
    EXPECT_THROW(split(t, 0.6, 1), ValidationError);
}

TEST(Topology, NoLeakageAcrossSplits) {
    PipelineConfig cfg;
    cfg.points_per_group = 200;
    cfg.split = {11, 0.05, 0.01};
    const auto d = build_datasets(synthetic(45), cfg, 2);
    const auto lr_train = d.lowres_train.keys(), lr_test = d.lowres_test.keys();
    const auto hr_train = d.highres_train.keys(), hr_test = d.highres_test.keys();
    const auto lr_all = d.lowres.keys();
    for (const auto* train : {&lr_train, &hr_train}) {
        for (const auto* test : {&lr_test, &hr_test}) {
            for (const auto& k : *test) ASSERT_EQ(train->count(k), 0u);
        }
    }
    for (const auto& k : d.highres.keys()) ASSERT_EQ(lr_all.count(k), 0u);
    // The dense table is built from the training knots only.
    const auto from_train = densify(d.lowres_train, cfg.points_per_group, cfg.drop_knots);
    EXPECT_EQ(csv(from_train), csv(d.highres));
    EXPECT_EQ(d.unified_test().size(), d.lowres_test.size() + d.highres_test.size());
}

TEST(Preprocessor, EncodingAndScaling) {
    const auto t = synthetic(5);
    const auto p = fit_preprocessor(t);
    EXPECT_EQ(p.nuclides, (std::vector<std::string>{"Co-60", "Cs-137", "Xe-135"}));
    EXPECT_EQ(p.stabilities, (std::vector<StabilityClass>{StabilityClass::A, StabilityClass::D, StabilityClass::F}));
    EXPECT_EQ(p.target(1e-10), -10.0);
    const auto lo = p.features({"Xe-135", StabilityClass::F, 10.0, 25.0});
    EXPECT_EQ(lo[kRadionuclide], 2.0);
    EXPECT_EQ(lo[kStability], 2.0);
    EXPECT_EQ(lo[kHeight], 0.0);
    EXPECT_EQ(lo[kDistance], 0.0);
    const auto hi = p.features({"Co-60", StabilityClass::A, 200.0, 2000.0});
    EXPECT_EQ(hi[kHeight], 1.0);
    EXPECT_EQ(hi[kDistance], 1.0);
    EXPECT_TRUE(p.in_bounds(100.0, 500.0));
    EXPECT_FALSE(p.in_bounds(100.0, 2500.0));
    EXPECT_THROW(p.features({"I-131", StabilityClass::A, 10.0, 25.0}), DomainError);
    EXPECT_THROW(p.features({"Co-60", StabilityClass::B, 10.0, 25.0}), DomainError);
    EXPECT_THROW(p.target(0.0), DomainError);
    EXPECT_THROW(p.target(INFINITY), DomainError);

    const auto data = p.transform(t);
    ASSERT_EQ(data.X.rows, t.size());
    ASSERT_EQ(data.X.cols, kNumFeatures);
    const auto back = p.inverse_target(data.y);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LT(std::abs(back[i] / t.rows[i].dose - 1.0), 1e-12);

    const auto sel = data.X.select({3, 0});
    EXPECT_EQ(sel.cols, 2u);
    EXPECT_EQ(sel.at(7, 0), data.X.at(7, 3));
    EXPECT_EQ(sel.at(7, 1), data.X.at(7, 0));
    const auto sub = data.X.subset({5, 2});
    EXPECT_EQ(sub.at(1, 3), data.X.at(2, 3));
    EXPECT_THROW(fit_preprocessor(DoseTable{}), ValidationError);
}

TEST(Preprocessor, Skewness) {
    EXPECT_NEAR(skewness({1.0, 2.0, 3.0}), 0.0, 1e-15);
    EXPECT_NEAR(skewness({0.0, 0.0, 0.0, 1.0}), 2.0 / std::sqrt(3.0), 1e-12);
    EXPECT_EQ(skewness({4.0, 4.0}), 0.0);
    EXPECT_THROW(skewness({1.0}), ValidationError);
}
