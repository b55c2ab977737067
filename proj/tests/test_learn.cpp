#include <catch2/catch.hpp>

#include <sstream>

#include "aggseg/learn.hpp"
#include "aggseg/synth.hpp"
#include "oracles.hpp"

using namespace aggseg;

namespace {

// 4x8 scene: gold standard splits the grid into left and right halves,
// superpixels tile it with eight 2x2 blocks.
struct Scene {
    LabelVolume sp, gt;
    CueVolume cues;
};

Scene half_split_scene() {
    Shape shape({4, 8});
    LabelVolume sp(shape), gt(shape);
    CueVolume cues(shape, 2);
    std::array<std::uint64_t, 2> c{};
    for (c[0] = 0; c[0] < 4; ++c[0]) {
        for (c[1] = 0; c[1] < 8; ++c[1]) {
            const auto i = shape.flatten(std::span<const std::uint64_t>(c));
            sp[i] = 1 + (c[0] / 2) * 4 + c[1] / 2;
            gt[i] = c[1] < 4 ? 1 : 2;
            const bool at_boundary = c[1] == 3 || c[1] == 4;
            cues.at(0, i) = at_boundary ? 0.9 : 0.1;
            cues.at(1, i) = c[1] < 4 ? 0.2 : 0.8;  // texture differs across the split
        }
    }
    return {std::move(sp), std::move(gt), std::move(cues)};
}

FeatureMap small_map(std::size_t channels, std::size_t ndim = 2) {
    return FeatureMap(default_feature_config(channels, ndim, 10, 3));
}

Rag::Config config_for(const FeatureMap& fm) {
    Rag::Config cfg;
    cfg.hist_bins = fm.hist_bins();
    cfg.with_spatial = fm.needs_spatial();
    return cfg;
}

ForestParams small_forest(std::uint64_t seed) {
    ForestParams p;
    p.n_trees = 8;
    p.max_depth = 6;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("best agglomeration assignment") {
    SECTION("identity when superpixels equal the gold standard") {
        auto gt = LabelVolume(Shape({6}), {1, 1, 2, 2, 3, 3});
        auto a = best_agglomeration(gt, gt);
        for (auto [s, u] : a.assigned) CHECK(s == u);
    }
    SECTION("argmax overlap wins") {
        LabelVolume sp(Shape({13}), std::vector<std::uint64_t>(13, 1));
        std::vector<std::uint64_t> g(13, 1);
        for (int i = 10; i < 13; ++i) g[i] = 2;
        auto a = best_agglomeration(sp, LabelVolume(Shape({13}), g));
        CHECK(a.assigned.at(1) == 1);
        CHECK(a.overlap.at(1).at(1) == 10);
        CHECK(a.overlap.at(1).at(2) == 3);
    }
    SECTION("exact ties go to the smaller gold id") {
        LabelVolume sp(Shape({8}), std::vector<std::uint64_t>(8, 1));
        LabelVolume gt(Shape({8}), {7, 7, 7, 7, 3, 3, 3, 3});
        auto a = best_agglomeration(sp, gt);
        CHECK(a.assigned.at(1) == 3);
    }
    SECTION("ignore-only superpixels flagged with gold 0") {
        LabelVolume sp(Shape({4}), {1, 1, 2, 2});
        LabelVolume gt(Shape({4}), {5, 5, 0, 0});
        auto a = best_agglomeration(sp, gt);
        CHECK(a.assigned.at(1) == 5);
        CHECK(a.assigned.at(2) == 0);
    }
}

TEST_CASE("edge labels from assignment purity") {
    auto scene = half_split_scene();
    auto a = best_agglomeration(scene.sp, scene.gt);
    auto rag = build_rag(scene.sp, scene.cues, Rag::Config{});  // features unused here

    // superpixel-level nodes are singletons, hence always pure
    CHECK(label_edge(a, rag.node(1), rag.node(2)) == -1);  // both gold 1
    CHECK(label_edge(a, rag.node(2), rag.node(3)) == +1);  // gold 1 vs gold 2

    // an impure composite node yields don't-know
    NodeRecord mixed;
    mixed.members = {2, 3};
    CHECK(label_edge(a, mixed, rag.node(1)) == 0);

    // nodes containing ignore-assigned superpixels yield don't-know
    LabelVolume sp(Shape({4}), {1, 1, 2, 2});
    LabelVolume gt(Shape({4}), {5, 5, 0, 0});
    auto b = best_agglomeration(sp, gt);
    NodeRecord n1, n2;
    n1.members = {1};
    n2.members = {2};
    CHECK(label_edge(b, n1, n2) == 0);
}

TEST_CASE("flat training set") {
    SECTION("1d strip with the gold split in the middle") {
        LabelVolume sp(Shape({8}), {1, 1, 2, 2, 3, 3, 4, 4});
        LabelVolume gt(Shape({8}), {1, 1, 1, 1, 2, 2, 2, 2});
        CueVolume cues(Shape({8}), 1, {0.1, 0.1, 0.2, 0.8, 0.8, 0.2, 0.1, 0.1});
        auto fm = small_map(1, 1);
        auto rag = build_rag(sp, cues, config_for(fm));
        auto ts = flat_train(rag, best_agglomeration(sp, gt), fm);
        REQUIRE(ts.size() == 3);  // one per edge, edges in ascending key order
        CHECK(ts.label(0) == -1);
        CHECK(ts.label(1) == +1);
        CHECK(ts.label(2) == -1);
        CHECK(ts.size() <= rag.edges().size());
    }
    SECTION("superpixels equal to gold yield a single class") {
        LabelVolume gt(Shape({6}), {1, 1, 1, 2, 2, 2});
        CueVolume cues(Shape({6}), 1, {0.1, 0.1, 0.4, 0.4, 0.1, 0.1});
        auto fm = small_map(1, 1);
        auto rag = build_rag(gt, cues, config_for(fm));
        auto ts = flat_train(rag, best_agglomeration(gt, gt), fm);
        CHECK_FALSE(ts.has_both_classes());
        CHECK_THROWS_WITH(train_forest(ts, small_forest(1), fm.config()),
                          Catch::Contains("single-class"));
    }
}

TEST_CASE("gala epoch reaches the best agglomeration") {
    auto scene = half_split_scene();
    auto a = best_agglomeration(scene.sp, scene.gt);
    auto fm = small_map(2);
    const auto cfg = config_for(fm);

    auto rag = build_rag(scene.sp, scene.cues, cfg);
    const std::size_t initial_nodes = rag.nodes().size();
    auto ts = gala_epoch(rag, Policy::mean_boundary(0), a, fm, 1, /*verify_purity=*/true);

    // terminal node count equals the number of distinct gold ids
    REQUIRE(rag.nodes().size() == 2);

    // every -1 example corresponds to a merge event
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < ts.size(); ++i)
        if (ts.label(i) == -1) ++negatives;
    CHECK(negatives == initial_nodes - rag.nodes().size());

    // terminal partition is exactly the projected assignment
    auto terminal = node_labeling(rag, scene.sp);
    auto projected = project_assignment(a, scene.sp);
    CHECK(vi(contingency(terminal, projected)).total == 0.0);

    // a different initial policy reaches the same terminal partition
    auto rag2 = build_rag(scene.sp, scene.cues, cfg);
    gala_epoch(rag2, Policy::random(99), a, fm, 1);
    auto terminal2 = node_labeling(rag2, scene.sp);
    CHECK(vi(contingency(terminal, terminal2)).total == 0.0);
}

TEST_CASE("gala epoch rejects impure inputs") {
    LabelVolume sp(Shape({4}), {1, 1, 2, 2});
    LabelVolume gt(Shape({4}), {5, 5, 0, 0});  // superpixel 2 is ignore-only
    CueVolume cues(Shape({4}), 1, {0.1, 0.2, 0.3, 0.4});
    auto a = best_agglomeration(sp, gt);
    auto fm = small_map(1, 1);
    auto rag = build_rag(sp, cues, config_for(fm));
    CHECK_THROWS_AS(gala_epoch(rag, Policy::mean_boundary(0), a, fm, 1), InternalError);
}

TEST_CASE("lash epoch labels by rand-index change") {
    LabelVolume sp(Shape({8}), {1, 1, 2, 2, 3, 3, 4, 4});
    LabelVolume gt(Shape({8}), {1, 1, 1, 1, 2, 2, 2, 2});
    CueVolume cues(Shape({8}), 1, {0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0});
    auto a = best_agglomeration(sp, gt);
    auto fm = small_map(1, 1);
    auto rag = build_rag(sp, cues, config_for(fm));

    auto ts = lash_epoch(rag, Policy::mean_boundary(0), a, fm, 1);
    // fragments of each gold half merge first (true merges), then the final
    // cross-gold merge proceeds anyway with a +1 label
    REQUIRE(rag.nodes().size() == 1);
    REQUIRE(ts.size() == 3);
    CHECK(ts.label(0) == -1);
    CHECK(ts.label(1) == -1);
    CHECK(ts.label(2) == +1);
}

TEST_CASE("lash skips zero rand-index changes") {
    LabelVolume sp(Shape({4}), {1, 1, 2, 2});
    LabelVolume gt(Shape({4}), {1, 2, 1, 2});
    CueVolume cues(Shape({4}), 1, {0.1, 0.1, 0.1, 0.1});
    auto a = best_agglomeration(sp, gt);
    auto fm = small_map(1, 1);
    auto rag = build_rag(sp, cues, config_for(fm));
    auto ts = lash_epoch(rag, Policy::mean_boundary(0), a, fm, 1);
    CHECK(ts.size() == 0);  // the only merge leaves RI unchanged
    CHECK(rag.nodes().size() == 1);
}

TEST_CASE("incremental delta rand-index matches brute force") {
    SplitMix64 rng(33);
    for (int trial = 0; trial < 30; ++trial) {
        Shape shape({5, 6});
        auto sp = oracle::random_labels(rng, shape, 7);
        auto gt = oracle::random_labels(rng, shape, 3);
        std::set<std::uint64_t> ids(sp.data.begin(), sp.data.end());
        std::vector<std::uint64_t> list(ids.begin(), ids.end());
        if (list.size() < 2) continue;
        const std::uint64_t x = list[rng.below(list.size())];
        std::uint64_t y = x;
        while (y == x) y = list[rng.below(list.size())];

        MergeContingency mc(sp, gt);
        const double before = oracle::rand_index_by_pairs(oracle::enumerate_pairs(sp, gt));
        auto merged = oracle::apply_merges(sp, {{x, y}});
        const double after = oracle::rand_index_by_pairs(oracle::enumerate_pairs(merged, gt));
        REQUIRE(mc.delta_ri(x, y) == Approx(after - before).margin(1e-12));
    }
}

TEST_CASE("gala_train with zero epochs reproduces flat learning") {
    auto scene = half_split_scene();
    auto fm = small_map(2);

    TrainOptions opts;
    opts.epochs = 0;
    opts.forest = small_forest(7);
    auto gala_model = gala_train(scene.sp, scene.cues, scene.gt, fm, opts);

    auto rag = build_rag(scene.sp, scene.cues, config_for(fm));
    auto flat_model =
        train_forest(flat_train(rag, best_agglomeration(scene.sp, scene.gt), fm),
                     small_forest(7), fm.config());

    std::ostringstream a, b;
    write_model_json(gala_model, a);
    write_model_json(flat_model, b);
    CHECK(a.str() == b.str());
}

TEST_CASE("gala_train is deterministic and grows its pool") {
    auto scene = half_split_scene();
    auto fm = small_map(2);
    TrainOptions opts;
    opts.epochs = 2;
    opts.forest = small_forest(11);
    opts.verify_purity = true;

    TrainingSet pool1, pool2;
    auto m1 = gala_train(scene.sp, scene.cues, scene.gt, fm, opts, &pool1);
    auto m2 = gala_train(scene.sp, scene.cues, scene.gt, fm, opts, &pool2);
    std::ostringstream s1, s2;
    write_model_json(m1, s1);
    write_model_json(m2, s2);
    CHECK(s1.str() == s2.str());
    std::ostringstream c1, c2;
    write_training_csv(pool1, c1);
    write_training_csv(pool2, c2);
    CHECK(c1.str() == c2.str());  // training sets byte-for-byte identical

    // the pool grows strictly with the epoch count
    TrainingSet pool0;
    TrainOptions o0 = opts;
    o0.epochs = 0;
    gala_train(scene.sp, scene.cues, scene.gt, fm, o0, &pool0);
    TrainingSet pool_k1;
    TrainOptions o1 = opts;
    o1.epochs = 1;
    gala_train(scene.sp, scene.cues, scene.gt, fm, o1, &pool_k1);
    CHECK(pool0.size() < pool_k1.size());
    CHECK(pool_k1.size() < pool1.size());

    // epochs add examples on top of the flat set
    auto a = best_agglomeration(scene.sp, scene.gt);
    const auto cfg = config_for(fm);
    auto rag = build_rag(scene.sp, scene.cues, cfg);
    auto epoch_set = gala_epoch(rag, learned_policy(m1), a, fm, 1);
    CHECK(epoch_set.size() > 0);
}

TEST_CASE("the whole training pipeline works in 3D") {
    SynthConfig cfg;
    cfg.shape = {10, 10, 10};
    cfg.regions = 5;
    cfg.blur_radius = 1;
    cfg.boundary_noise = 0.25;
    cfg.seed = 17;
    auto data = generate(cfg);

    auto fm = FeatureMap(default_feature_config(2, 3, 10, 3));
    CHECK_FALSE(fm.needs_spatial());  // no orientation/hull managers off the plane

    TrainOptions opts;
    opts.epochs = 1;
    opts.forest = small_forest(19);
    opts.rag_config.hist_bins = fm.hist_bins();
    opts.verify_purity = true;
    auto model = gala_train(data.sp, data.cues, data.gt, fm, opts);

    auto rag = build_rag(data.sp, data.cues, opts.rag_config);
    auto d = agglomerate(rag, learned_policy(model), 0.5);
    auto seg = apply_threshold(data.sp, d, 0.5);
    const double vi_seg = vi(contingency(seg, data.gt)).total;
    const double vi_sp = vi(contingency(data.sp, data.gt)).total;
    CHECK(vi_seg < vi_sp);  // agglomeration moves toward the gold standard
}

TEST_CASE("lash_train and mixed pools run end to end") {
    auto scene = half_split_scene();
    auto fm = small_map(2);
    TrainOptions opts;
    opts.epochs = 1;
    opts.forest = small_forest(13);

    TrainingSet lash_pool;
    auto lash_model = lash_train(scene.sp, scene.cues, scene.gt, fm, opts, &lash_pool);
    CHECK(lash_model.trees.size() == opts.forest.n_trees);
    // the final retrain sees only the newest epoch's examples
    REQUIRE(lash_pool.size() > 0);
    for (std::size_t i = 0; i < lash_pool.size(); ++i) {
        CHECK(lash_pool.tag(i).strategy == Strategy::lash);
        CHECK(lash_pool.tag(i).epoch == 1);
    }

    opts.mix_lash = true;
    auto mixed_model = gala_train(scene.sp, scene.cues, scene.gt, fm, opts);
    CHECK(mixed_model.trees.size() == opts.forest.n_trees);

    // mean/random warm starts require at least one epoch
    opts.epochs = 0;
    opts.init = InitPolicy::mean;
    CHECK_THROWS_AS(gala_train(scene.sp, scene.cues, scene.gt, fm, opts), DataError);
    opts.epochs = 1;
    CHECK(gala_train(scene.sp, scene.cues, scene.gt, fm, opts).trees.size() ==
          opts.forest.n_trees);
}
