#include <catch2/catch.hpp>

#include <cmath>

#include "aggseg/features.hpp"
#include "oracles.hpp"

using namespace aggseg;

namespace {

NodeRecord bar_node(NodeId id, std::initializer_list<HullPoint> voxels) {
    NodeRecord n;
    n.id = id;
    n.size = voxels.size();
    n.spatial = SpatialAccumulator(2);
    std::vector<HullPoint> pts;
    for (const auto& p : voxels) {
        std::array<std::uint64_t, 2> c{std::uint64_t(p[0]), std::uint64_t(p[1])};
        n.spatial.add_voxel(std::span<const std::uint64_t>(c));
        pts.push_back(p);
    }
    n.spatial.hull = convex_hull(pts);
    return n;
}

}  // namespace

TEST_CASE("jensen-shannon divergence") {
    std::vector<double> p{0.25, 0.75}, q{0.25, 0.75};
    CHECK(js_divergence(p, q) == Approx(0.0).margin(1e-15));
    std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
    CHECK(js_divergence(a, b) == Approx(1.0));  // disjoint supports, base-2
    CHECK(js_divergence(a, q) == js_divergence(q, a));
}

TEST_CASE("moment features on tiny accumulators") {
    NodeRecord u, v;
    u.cue.assign(1, CueAccumulator(10));
    v.cue.assign(1, CueAccumulator(10));
    EdgeRecord e;
    e.boundary_count = 1;
    e.boundary_cue.assign(1, CueAccumulator(10));
    u.cue[0].add_sample(0.0);
    u.cue[0].add_sample(1.0);
    v.cue[0].add_sample(0.0);
    v.cue[0].add_sample(1.0);
    e.boundary_cue[0].add_sample(0.5);

    auto f = moment_features(u, v, e);
    REQUIRE(f.size() == 19);
    CHECK(f[0] == Approx(std::log(2.0)));
    CHECK(f[1] == Approx(0.5));    // mean
    CHECK(f[2] == Approx(0.25));   // mu2
    CHECK(f[3] == Approx(0.0).margin(1e-15));
    CHECK(f[4] == Approx(0.0625));
    // u and v identical: all difference features zero
    CHECK(f[15] == Approx(0.0).margin(1e-15));
    CHECK(f[16] == Approx(0.0).margin(1e-15));
    CHECK(f[17] == Approx(0.0).margin(1e-15));
    CHECK(f[18] == Approx(0.0).margin(1e-15));
}

TEST_CASE("orientation features") {
    SECTION("collinear bars") {
        auto u = bar_node(1, {{0, 0}, {0, 1}, {0, 2}});
        auto v = bar_node(2, {{0, 5}, {0, 6}, {0, 7}});
        auto f = orientation_features(u, v);
        REQUIRE(f.size() == 4);
        CHECK(f[0] == Approx(0.0).margin(1e-12));
        CHECK(f[1] == Approx(0.0).margin(1e-12));
        CHECK(f[2] == Approx(0.0).margin(1e-12));
        CHECK(f[3] == 0.0);
    }
    SECTION("orthogonal bars") {
        auto u = bar_node(1, {{0, 0}, {0, 1}, {0, 2}});
        auto v = bar_node(2, {{1, 4}, {2, 4}, {3, 4}});
        auto f = orientation_features(u, v);
        CHECK(f[0] == Approx(std::acos(0.0)));  // pi/2 between the axes
        CHECK(f[3] == 0.0);
    }
    SECTION("single voxel is degenerate") {
        auto u = bar_node(1, {{0, 0}});
        auto v = bar_node(2, {{3, 0}, {3, 1}, {3, 2}});
        auto f = orientation_features(u, v);
        CHECK(f[0] == 0.0);
        CHECK(f[1] == 0.0);
        CHECK(f[3] == 1.0);
    }
}

TEST_CASE("hull features") {
    SECTION("solid rectangles are perfectly convex") {
        std::initializer_list<HullPoint> ra = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        std::initializer_list<HullPoint> rb = {{0, 2}, {0, 3}, {1, 2}, {1, 3}};
        auto u = bar_node(1, ra);
        auto v = bar_node(2, rb);
        auto f = hull_features(u, v);
        CHECK(f[0] == Approx(1.0));
        CHECK(f[1] == Approx(1.0));
        CHECK(f[2] == Approx(1.0));  // two adjacent squares merge into a rectangle
    }
    SECTION("an L-shape is less than convex") {
        auto u = bar_node(1, {{0, 0}, {1, 0}, {0, 1}});
        auto v = bar_node(2, {{5, 5}});
        auto f = hull_features(u, v);
        CHECK(f[0] == Approx(3.5 / 3.0));
        CHECK(f[1] == Approx(1.0));  // single voxel
    }
}

TEST_CASE("feature map composition") {
    SplitMix64 rng(5150);
    Shape shape({6, 6});
    auto sp = oracle::random_labels(rng, shape, 6);
    auto cues = oracle::random_cues(rng, shape, 2);
    Rag::Config cfg;
    cfg.with_spatial = true;
    auto rag = build_rag(sp, cues, cfg);

    FeatureMap fm(default_feature_config(2, 2));
    // q = channels*(3B+3Q+1) + channels*19 + 5 + 4 + 3
    CHECK(fm.size() == 2 * (75 + 27 + 1) + 2 * 19 + 5 + 4 + 3);

    const auto& [key, rec] = *rag.edges().begin();
    auto f1 = fm.compute(rag, key.u, key.v);
    auto f2 = fm.compute(rag, key.v, key.u);
    REQUIRE(f1.size() == fm.size());
    CHECK(f1 == f2);  // symmetric after canonical endpoint ordering
    for (double x : f1) CHECK(std::isfinite(x));

    // purity: identical records, identical output
    auto f3 = fm.compute(rag, key.u, key.v);
    CHECK(f1 == f3);
}

TEST_CASE("incremental features match a rebuilt rag after merges") {
    SplitMix64 rng(777);
    int done = 0;
    while (done < 40) {
        Shape shape({6, 7});
        auto sp = oracle::random_labels(rng, shape, 8);
        auto cues = oracle::random_cues(rng, shape, 2);
        Rag::Config cfg;
        cfg.with_spatial = true;
        cfg.hist_bins = 10;
        Rag rag;
        try {
            rag = build_rag(sp, cues, cfg);
        } catch (const DataError&) {
            continue;
        }
        if (rag.nodes().size() < 4) continue;
        ++done;

        const auto pol = Policy::mean_boundary(0);
        rag.rescore(pol);
        std::vector<std::pair<NodeId, NodeId>> merges;
        for (int m = 0; m < 3 && rag.edges().size() > 1; ++m) {
            auto it = rag.edges().begin();
            std::advance(it, rng.below(rag.edges().size()));
            auto key = it->first;
            rag.merge_nodes(key.u, key.v, pol);
            merges.push_back({key.u, key.v});
        }

        auto relabeled = oracle::apply_merges(sp, merges);
        auto rebuilt = build_rag(relabeled, cues, cfg);

        FeatureMap fm(default_feature_config(2, 2, 10, 3));
        REQUIRE(rag.edges().size() == rebuilt.edges().size());
        for (const auto& [key, rec] : rag.edges()) {
            auto fi = fm.compute(rag, key.u, key.v);
            auto fs = fm.compute(rebuilt, key.u, key.v);
            REQUIRE(fi.size() == fs.size());
            for (std::size_t i = 0; i < fi.size(); ++i) {
                REQUIRE(fi[i] == Approx(fs[i]).margin(1e-9).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("feature config json round trip") {
    auto cfg = default_feature_config(3, 2, 10, 3);
    auto j = feature_config_to_json(cfg);
    auto back = feature_config_from_json(j);
    REQUIRE(back.channels == 3);
    REQUIRE(back.managers.size() == cfg.managers.size());
    CHECK(back.managers[0].kind == ManagerKind::histogram);
    CHECK(back.managers[0].bins == 10);
    CHECK(back.managers[0].quantiles == 3);
    CHECK(FeatureMap(back).size() == FeatureMap(cfg).size());

    CHECK_THROWS_AS(feature_config_from_json(nlohmann::json{
                        {"channels", 1},
                        {"managers", nlohmann::json::array({{{"type", "bogus"}}})}}),
                    DataError);
}
