#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "aggseg/classify.hpp"
#include "aggseg/eval.hpp"
#include "aggseg/features.hpp"
#include "aggseg/rag.hpp"
#include "aggseg/volume.hpp"

namespace aggseg {

/// Assignment of every superpixel to the gold segment it overlaps most,
/// with the full overlap counts retained. Superpixels overlapping only
/// ignore voxels are assigned gold id 0 and excluded from edge labels.
struct BestAssignment {
    std::map<NodeId, std::uint64_t> assigned;  // superpixel -> gold id (0 = ignore-only)
    MergeContingency::Rows overlap;            // superpixel -> gold -> voxel count
};

inline BestAssignment best_agglomeration(const LabelVolume& sp, const LabelVolume& gt) {
    if (sp.shape != gt.shape) throw DataError("best_agglomeration: shape mismatch");
    BestAssignment a;
    for (std::uint64_t i = 0; i < sp.data.size(); ++i) {
        const std::uint64_t s = sp[i], u = gt[i];
        if (s == 0) continue;
        a.overlap.try_emplace(s);
        if (u == 0) continue;
        ++a.overlap[s][u];
    }
    for (const auto& [s, row] : a.overlap) {
        std::uint64_t best_gold = 0, best_count = 0;
        for (const auto& [u, c] : row) {
            if (c > best_count) {  // ascending id order: ties keep the smaller gold id
                best_count = c;
                best_gold = u;
            }
        }
        a.assigned[s] = best_gold;
    }
    return a;
}

/// Project the assignment onto the voxel grid: the finest segmentation
/// reachable from the superpixels.
inline LabelVolume project_assignment(const BestAssignment& a, const LabelVolume& sp) {
    LabelVolume out(sp.shape);
    for (std::uint64_t i = 0; i < sp.data.size(); ++i) {
        if (sp[i] == 0) continue;
        auto it = a.assigned.find(sp[i]);
        if (it == a.assigned.end())
            throw DataError("project_assignment: superpixel missing from assignment");
        out[i] = it->second;
    }
    return out;
}

/// Current node partition of a rag written back onto the voxel grid.
inline LabelVolume node_labeling(const Rag& rag, const LabelVolume& sp) {
    std::map<NodeId, NodeId> to_node;
    for (const auto& [id, node] : rag.nodes())
        for (NodeId m : node.members) to_node[m] = id;
    LabelVolume out(sp.shape);
    for (std::uint64_t i = 0; i < sp.data.size(); ++i) {
        if (sp[i] == 0) continue;
        auto it = to_node.find(sp[i]);
        if (it == to_node.end()) throw DataError("node_labeling: superpixel missing from rag");
        out[i] = it->second;
    }
    return out;
}

namespace detail {

/// Gold id shared by all of a node's members, or 0 when the node is impure
/// or touches an ignore-assigned superpixel.
inline std::uint64_t pure_gold(const BestAssignment& a, const NodeRecord& node) {
    std::uint64_t gold = 0;
    for (NodeId m : node.members) {
        auto it = a.assigned.find(m);
        if (it == a.assigned.end())
            throw DataError("label_edge: node member missing from assignment");
        if (it->second == 0) return 0;
        if (gold == 0)
            gold = it->second;
        else if (gold != it->second)
            return 0;
    }
    return gold;
}

}  // namespace detail

/// -1 when both nodes sit inside the same gold segment, +1 when they sit in
/// two different ones, 0 when either node is not pure.
inline int label_edge(const BestAssignment& a, const NodeRecord& u, const NodeRecord& v) {
    const std::uint64_t gu = detail::pure_gold(a, u);
    const std::uint64_t gv = detail::pure_gold(a, v);
    if (gu == 0 || gv == 0) return 0;
    return gu == gv ? -1 : +1;
}

/// One labeled example per superpixel-level edge. Don't-know edges (only
/// possible via ignore-assigned superpixels at this level) are skipped.
inline TrainingSet flat_train(const Rag& rag, const BestAssignment& a, const FeatureMap& fm) {
    TrainingSet ts(fm.size());
    for (const auto& [key, rec] : rag.edges()) {
        const int label = label_edge(a, rag.node(key.u), rag.node(key.v));
        if (label == 0) continue;
        ts.add(fm.compute(rag, key.u, key.v), label, {Strategy::flat, 0});
    }
    return ts;
}

/// One guided training epoch: pop the policy's favorite edge, record the
/// example at pop time, merge only when the gold standard agrees, retire the
/// edge otherwise (a later endpoint change re-enqueues it). Runs until the
/// heap is exhausted, at which point the rag matches the best agglomeration
/// on every connected component.
inline TrainingSet gala_epoch(Rag& rag, const Policy& policy, const BestAssignment& a,
                              const FeatureMap& fm, int epoch, bool verify_purity = false) {
    rag.rescore(policy);
    TrainingSet ts(fm.size());

    std::map<NodeId, std::uint64_t> gold;  // node -> pure gold id
    for (const auto& [id, node] : rag.nodes()) gold[id] = detail::pure_gold(a, node);

    while (auto e = rag.pop_live()) {
        auto features = fm.compute(rag, e->u, e->v);
        const std::uint64_t gu = gold.at(e->u), gv = gold.at(e->v);
        if (gu == 0 || gv == 0)
            throw InternalError("gala_epoch: don't-know pair (impure superpixels leaked in)");
        const int label = gu == gv ? -1 : +1;
        ts.add(features, label, {Strategy::gala, epoch});
        if (label == -1) {
            const NodeId survivor = rag.merge_nodes(e->u, e->v, policy);
            const NodeId absorbed = survivor == e->u ? e->v : e->u;
            gold.erase(absorbed);
            gold[survivor] = gu;
            if (verify_purity && detail::pure_gold(a, rag.node(survivor)) != gu)
                throw InternalError("gala_epoch: merged node lost purity");
        }
    }
    return ts;
}

/// One unguided epoch: merges always proceed in policy order and the label
/// is the sign of the Rand-index change, computed incrementally from the
/// node-gold overlap rows. Zero-change merges yield no example.
inline TrainingSet lash_epoch(Rag& rag, const Policy& policy, const BestAssignment& a,
                              const FeatureMap& fm, int epoch) {
    rag.rescore(policy);
    TrainingSet ts(fm.size());
    MergeContingency mc(a.overlap);
    while (auto e = rag.pop_live()) {
        auto features = fm.compute(rag, e->u, e->v);
        const int sign = mc.delta_ri_sign(e->u, e->v);
        if (sign != 0) ts.add(features, sign > 0 ? -1 : +1, {Strategy::lash, epoch});
        mc.merge_rows(std::min(e->u, e->v), std::max(e->u, e->v));
        rag.merge_nodes(e->u, e->v, policy);
    }
    return ts;
}

enum class InitPolicy { flat, mean, random };

struct TrainOptions {
    int epochs = 5;
    ForestParams forest;
    InitPolicy init = InitPolicy::flat;
    bool mix_lash = false;  // append LASH examples to each epoch's data
    Rag::Config rag_config;
    std::size_t mean_channel = 0;  // for InitPolicy::mean
    std::uint64_t random_seed = 0; // for InitPolicy::random
    bool verify_purity = false;
};

namespace detail {

inline Rag::Config rag_config_for(const FeatureMap& fm, Rag::Config base) {
    base.hist_bins = fm.hist_bins();
    base.with_spatial = fm.needs_spatial();
    return base;
}

inline Policy initial_policy(const TrainOptions& opts) {
    switch (opts.init) {
        case InitPolicy::mean: return Policy::mean_boundary(opts.mean_channel);
        case InitPolicy::random: return Policy::random(opts.random_seed);
        case InitPolicy::flat: throw InternalError("flat init trains a model instead");
    }
    throw InternalError("unreachable init policy");
}

}  // namespace detail

/// Guided agglomerative training: a flat-trained model (or a mean/random
/// warm start) drives epochs whose examples accumulate across all epochs.
/// capture_pool, when given, receives the data the final model trained on.
inline ForestModel gala_train(const LabelVolume& sp, const CueVolume& cues, const LabelVolume& gt,
                              const FeatureMap& fm, const TrainOptions& opts,
                              TrainingSet* capture_pool = nullptr) {
    const auto a = best_agglomeration(sp, gt);
    const auto cfg = detail::rag_config_for(fm, opts.rag_config);

    TrainingSet pool(fm.size());
    ForestModel model;
    bool have_model = false;
    if (opts.init == InitPolicy::flat) {
        auto rag = build_rag(sp, cues, cfg);
        pool = flat_train(rag, a, fm);
        model = train_forest(pool, opts.forest, fm.config());
        have_model = true;
    } else if (opts.epochs < 1) {
        throw DataError("gala_train: mean/random init needs at least one epoch");
    }

    for (int k = 1; k <= opts.epochs; ++k) {
        const Policy policy = have_model ? learned_policy(model) : detail::initial_policy(opts);
        {
            auto rag = build_rag(sp, cues, cfg);
            pool.append(gala_epoch(rag, policy, a, fm, k, opts.verify_purity));
        }
        if (opts.mix_lash) {
            auto rag = build_rag(sp, cues, cfg);
            pool.append(lash_epoch(rag, policy, a, fm, k));
        }
        model = train_forest(pool, opts.forest, fm.config());
        have_model = true;
    }
    if (capture_pool) *capture_pool = pool;
    return model;
}

/// LASH-style training: same epoch loop, but each retrain keeps only the
/// previous epoch's examples.
inline ForestModel lash_train(const LabelVolume& sp, const CueVolume& cues, const LabelVolume& gt,
                              const FeatureMap& fm, const TrainOptions& opts,
                              TrainingSet* capture_pool = nullptr) {
    const auto a = best_agglomeration(sp, gt);
    const auto cfg = detail::rag_config_for(fm, opts.rag_config);

    ForestModel model;
    bool have_model = false;
    TrainingSet last(fm.size());
    if (opts.init == InitPolicy::flat) {
        auto rag = build_rag(sp, cues, cfg);
        last = flat_train(rag, a, fm);
        model = train_forest(last, opts.forest, fm.config());
        have_model = true;
    } else if (opts.epochs < 1) {
        throw DataError("lash_train: mean/random init needs at least one epoch");
    }

    for (int k = 1; k <= opts.epochs; ++k) {
        const Policy policy = have_model ? learned_policy(model) : detail::initial_policy(opts);
        auto rag = build_rag(sp, cues, cfg);
        last = lash_epoch(rag, policy, a, fm, k);
        model = train_forest(last, opts.forest, fm.config());
        have_model = true;
    }
    if (capture_pool) *capture_pool = last;
    return model;
}

}  // namespace aggseg
