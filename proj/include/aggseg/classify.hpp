#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aggseg/features.hpp"
#include "aggseg/rag.hpp"
#include "aggseg/util.hpp"

namespace aggseg {

enum class Strategy { flat, gala, lash };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::flat: return "flat";
        case Strategy::gala: return "gala";
        case Strategy::lash: return "lash";
    }
    throw InternalError("unreachable strategy");
}

/// Labeled feature vectors accumulated across training epochs. Labels are
/// strictly -1 (should merge) or +1 (should not); "don't know" pairs are
/// never stored.
class TrainingSet {
public:
    struct Tag {
        Strategy strategy = Strategy::flat;
        int epoch = 0;
    };

    TrainingSet() = default;
    explicit TrainingSet(std::size_t q) : q_(q) {}

    std::size_t dim() const { return q_; }
    std::size_t size() const { return labels_.size(); }

    void add(std::span<const double> x, int label, Tag tag) {
        if (label != -1 && label != 1) throw InternalError("training label must be -1 or +1");
        if (q_ == 0) q_ = x.size();
        if (x.size() != q_) throw DataError("training example has wrong dimension");
        features_.insert(features_.end(), x.begin(), x.end());
        labels_.push_back(std::int8_t(label));
        tags_.push_back(tag);
    }

    void append(const TrainingSet& other) {
        if (other.size() == 0) return;
        if (q_ == 0) q_ = other.q_;
        if (other.q_ != q_) throw DataError("training sets have different dimensions");
        features_.insert(features_.end(), other.features_.begin(), other.features_.end());
        labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
        tags_.insert(tags_.end(), other.tags_.begin(), other.tags_.end());
    }

    std::span<const double> example(std::size_t i) const {
        return {features_.data() + i * q_, q_};
    }
    int label(std::size_t i) const { return labels_[i]; }
    Tag tag(std::size_t i) const { return tags_[i]; }

    bool has_both_classes() const {
        bool pos = false, neg = false;
        for (auto l : labels_) (l > 0 ? pos : neg) = true;
        return pos && neg;
    }

private:
    std::size_t q_ = 0;
    std::vector<double> features_;
    std::vector<std::int8_t> labels_;
    std::vector<Tag> tags_;
};

struct ForestParams {
    std::size_t n_trees = 100;
    std::size_t max_depth = 20;
    std::size_t min_leaf = 1;
    std::size_t features_per_split = 0;  // 0 = ceil(sqrt(q))
    std::uint64_t seed = 0;
};

/// One binary decision tree. Internal nodes route x[feature] < threshold to
/// the left child; leaves store the fraction of +1 samples that landed there.
struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0;
    std::int32_t left = -1, right = -1;
    double leaf_p = 0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> x) const {
        std::int32_t i = 0;
        while (nodes[std::size_t(i)].feature >= 0) {
            const TreeNode& n = nodes[std::size_t(i)];
            i = x[std::size_t(n.feature)] < n.threshold ? n.left : n.right;
        }
        return nodes[std::size_t(i)].leaf_p;
    }
};

/// Random forest scoring the probability that an edge should NOT merge, so
/// low scores merge first. Carries the feature map it was trained with.
struct ForestModel {
    ForestParams params;
    FeatureConfig feature_map;
    std::size_t q = 0;
    std::vector<Tree> trees;

    double predict_proba(std::span<const double> x) const {
        if (x.size() != q) throw DataError("predict: feature vector length mismatch");
        double sum = 0;
        for (const auto& t : trees) sum += t.predict(x);
        return sum / double(trees.size());
    }
};

namespace detail {

struct SplitSample {
    double value;
    double weight;
    bool positive;
};

class TreeBuilder {
public:
    TreeBuilder(const TrainingSet& ts, const ForestParams& params, std::size_t mtry,
                std::uint64_t seed)
        : ts_(ts), params_(params), mtry_(mtry), rng_(seed) {}

    Tree build() {
        // bootstrap resample as per-example multiplicities
        const std::size_t n = ts_.size();
        std::vector<std::uint32_t> mult(n, 0);
        for (std::size_t i = 0; i < n; ++i) ++mult[rng_.below(n)];
        std::vector<std::uint32_t> idx;
        for (std::uint32_t i = 0; i < n; ++i)
            if (mult[i] > 0) idx.push_back(i);
        mult_ = std::move(mult);
        Tree tree;
        grow(tree, idx, 0);
        return tree;
    }

private:
    std::int32_t grow(Tree& tree, std::vector<std::uint32_t>& idx, std::size_t depth) {
        double total = 0, pos = 0;
        for (auto i : idx) {
            total += mult_[i];
            if (ts_.label(i) > 0) pos += mult_[i];
        }
        const auto make_leaf = [&] {
            tree.nodes.push_back({-1, 0, -1, -1, pos / total});
            return std::int32_t(tree.nodes.size() - 1);
        };
        if (depth >= params_.max_depth || pos == 0 || pos == total ||
            total < 2 * double(params_.min_leaf))
            return make_leaf();

        // greedy Gini split over a random feature subset
        const double parent_gini = gini(pos, total);
        bool found = false;
        std::size_t best_f = 0;
        double best_thr = 0, best_gain = 0;
        for (std::size_t f : draw_features()) {
            std::vector<SplitSample> col;
            col.reserve(idx.size());
            for (auto i : idx)
                col.push_back({ts_.example(i)[f], double(mult_[i]), ts_.label(i) > 0});
            std::sort(col.begin(), col.end(),
                      [](const SplitSample& a, const SplitSample& b) { return a.value < b.value; });
            double wl = 0, pl = 0;
            for (std::size_t k = 0; k + 1 < col.size(); ++k) {
                wl += col[k].weight;
                if (col[k].positive) pl += col[k].weight;
                if (col[k].value == col[k + 1].value) continue;  // threshold only between distinct values
                const double wr = total - wl, pr = pos - pl;
                if (wl < double(params_.min_leaf) || wr < double(params_.min_leaf)) continue;
                const double gain =
                    parent_gini - (wl / total) * gini(pl, wl) - (wr / total) * gini(pr, wr);
                const double thr = (col[k].value + col[k + 1].value) / 2.0;
                if (!found || gain > best_gain ||
                    (gain == best_gain && (f < best_f || (f == best_f && thr < best_thr)))) {
                    found = true;
                    best_gain = gain;
                    best_f = f;
                    best_thr = thr;
                }
            }
        }
        if (!found || best_gain <= 0) return make_leaf();

        std::vector<std::uint32_t> left, right;
        for (auto i : idx)
            (ts_.example(i)[best_f] < best_thr ? left : right).push_back(i);
        idx.clear();
        idx.shrink_to_fit();

        tree.nodes.push_back({std::int32_t(best_f), best_thr, -1, -1, 0});
        const auto self = std::int32_t(tree.nodes.size() - 1);
        const auto l = grow(tree, left, depth + 1);
        const auto r = grow(tree, right, depth + 1);
        tree.nodes[std::size_t(self)].left = l;
        tree.nodes[std::size_t(self)].right = r;
        return self;
    }

    static double gini(double pos, double total) {
        const double p = pos / total;
        return 1.0 - p * p - (1.0 - p) * (1.0 - p);
    }

    std::vector<std::size_t> draw_features() {
        const std::size_t q = ts_.dim();
        if (scratch_.size() != q) {
            scratch_.resize(q);
            for (std::size_t i = 0; i < q; ++i) scratch_[i] = i;
        }
        // partial Fisher-Yates; drawn prefix is re-sorted so the candidate
        // order never depends on the permutation state
        for (std::size_t i = 0; i < mtry_; ++i)
            std::swap(scratch_[i], scratch_[i + rng_.below(q - i)]);
        std::vector<std::size_t> out(scratch_.begin(), scratch_.begin() + std::ptrdiff_t(mtry_));
        std::sort(out.begin(), out.end());
        return out;
    }

    const TrainingSet& ts_;
    const ForestParams& params_;
    std::size_t mtry_;
    SplitMix64 rng_;
    std::vector<std::uint32_t> mult_;
    std::vector<std::size_t> scratch_;
};

}  // namespace detail

/// Train a forest on bootstrap resamples with greedy Gini splits. Fully
/// deterministic given (training set, params): per-tree seeds are drawn
/// sequentially up front, then trees build independently (in parallel).
/// An empty manager list marks raw externally-computed features; otherwise
/// the embedded map must produce exactly the training dimension.
inline ForestModel train_forest(const TrainingSet& ts, ForestParams params,
                                const FeatureConfig& feature_map) {
    if (ts.size() == 0) throw DataError("train_forest: empty training set");
    if (!ts.has_both_classes()) throw DataError("train_forest: single-class training set");
    if (!feature_map.managers.empty() && FeatureMap(feature_map).size() != ts.dim())
        throw DataError("train_forest: feature map size does not match training dimension");
    if (params.n_trees < 1 || params.max_depth < 1 || params.min_leaf < 1)
        throw DataError("train_forest: invalid parameters");
    const std::size_t q = ts.dim();
    std::size_t mtry = params.features_per_split;
    if (mtry == 0) mtry = std::size_t(std::ceil(std::sqrt(double(q))));
    if (mtry > q) throw DataError("train_forest: features_per_split exceeds dimension");

    SplitMix64 seeder(params.seed);
    std::vector<std::uint64_t> tree_seeds(params.n_trees);
    for (auto& s : tree_seeds) s = seeder.next();

    ForestModel model;
    model.params = params;
    model.feature_map = feature_map;
    model.q = q;
    model.trees.resize(params.n_trees);

    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), params.n_trees);
    std::atomic<std::size_t> cursor{0};
    auto work = [&] {
        while (true) {
            const std::size_t t = cursor.fetch_add(1);
            if (t >= params.n_trees) break;
            detail::TreeBuilder builder(ts, params, mtry, tree_seeds[t]);
            model.trees[t] = builder.build();
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    return model;
}

/// Policy driven by a trained model: score = predicted probability that the
/// pair should stay separate.
inline Policy learned_policy(const ForestModel& model) {
    auto fm = std::make_shared<FeatureMap>(model.feature_map);
    auto forest = std::make_shared<ForestModel>(model);
    return {"learned", [fm, forest](const Rag& rag, NodeId u, NodeId v) {
                return forest->predict_proba(fm->compute(rag, u, v));
            }};
}

// ---------------------------------------------------------------------------
// Model file: JSON with 17-significant-digit reals. The writer is manual so
// the number format is pinned; parsing goes through nlohmann::json.
// ---------------------------------------------------------------------------

constexpr int kModelFormatVersion = 1;

inline void write_model_json(const ForestModel& m, std::ostream& out) {
    out << "{\"format_version\":" << kModelFormatVersion << ",\"params\":{"
        << "\"n_trees\":" << m.params.n_trees << ",\"max_depth\":" << m.params.max_depth
        << ",\"min_leaf\":" << m.params.min_leaf
        << ",\"features_per_split\":" << m.params.features_per_split
        << ",\"seed\":" << m.params.seed << "},\"feature_map\":"
        << feature_config_to_json(m.feature_map).dump() << ",\"q\":" << m.q << ",\"trees\":[";
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        out << (t ? ",[" : "[");
        const auto& nodes = m.trees[t].nodes;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const TreeNode& n = nodes[i];
            out << (i ? "," : "");
            if (n.feature < 0)
                out << "[-1," << format_real17(n.leaf_p) << ']';
            else
                out << '[' << n.feature << ',' << format_real17(n.threshold) << ',' << n.left
                    << ',' << n.right << ']';
        }
        out << ']';
    }
    out << "]}\n";
}

inline void save_model(const ForestModel& m, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    write_model_json(m, f);
    if (!f) throw DataError("write failed: " + path.string());
}

inline ForestModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model JSON: " + std::string(e.what()));
    }
    try {
        if (j.at("format_version").get<int>() != kModelFormatVersion)
            throw DataError("model format version mismatch: " + path.string());
        ForestModel m;
        const auto& p = j.at("params");
        m.params.n_trees = p.at("n_trees").get<std::size_t>();
        m.params.max_depth = p.at("max_depth").get<std::size_t>();
        m.params.min_leaf = p.at("min_leaf").get<std::size_t>();
        m.params.features_per_split = p.at("features_per_split").get<std::size_t>();
        m.params.seed = p.at("seed").get<std::uint64_t>();
        m.feature_map = feature_config_from_json(j.at("feature_map"));
        m.q = j.at("q").get<std::size_t>();
        if (!m.feature_map.managers.empty() && FeatureMap(m.feature_map).size() != m.q)
            throw DataError("model q does not match its embedded feature map");
        for (const auto& jt : j.at("trees")) {
            Tree tree;
            for (const auto& jn : jt) {
                TreeNode n;
                n.feature = jn.at(0).get<std::int32_t>();
                if (n.feature < 0) {
                    n.leaf_p = jn.at(1).get<double>();
                } else {
                    if (std::size_t(n.feature) >= m.q)
                        throw DataError("model tree references feature beyond q");
                    n.threshold = jn.at(1).get<double>();
                    n.left = jn.at(2).get<std::int32_t>();
                    n.right = jn.at(3).get<std::int32_t>();
                }
                tree.nodes.push_back(n);
            }
            if (tree.nodes.empty()) throw DataError("model contains an empty tree");
            m.trees.push_back(std::move(tree));
        }
        if (m.trees.empty()) throw DataError("model contains no trees");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed model JSON: " + std::string(e.what()));
    }
}

// ---------------------------------------------------------------------------
// Training-set dump: CSV `label,f0,f1,...` plus a sidecar JSON of provenance
// ---------------------------------------------------------------------------

inline void write_training_csv(const TrainingSet& ts, std::ostream& out) {
    out << "label";
    for (std::size_t f = 0; f < ts.dim(); ++f) out << ",f" << f;
    out << '\n';
    for (std::size_t i = 0; i < ts.size(); ++i) {
        out << int(ts.label(i));
        for (double x : ts.example(i)) out << ',' << format_real17(x);
        out << '\n';
    }
}

inline nlohmann::json training_provenance_json(const TrainingSet& ts,
                                               const FeatureConfig* fm = nullptr) {
    nlohmann::json ranges = nlohmann::json::array();
    std::size_t begin = 0;
    for (std::size_t i = 0; i <= ts.size(); ++i) {
        const bool flush =
            i == ts.size() || (i > begin && (ts.tag(i).strategy != ts.tag(begin).strategy ||
                                             ts.tag(i).epoch != ts.tag(begin).epoch));
        if (flush) {
            if (i > begin)
                ranges.push_back({{"strategy", strategy_name(ts.tag(begin).strategy)},
                                  {"epoch", ts.tag(begin).epoch},
                                  {"begin", begin},
                                  {"end", i}});
            begin = i;
        }
    }
    nlohmann::json j{{"examples", ts.size()}, {"q", ts.dim()}, {"ranges", std::move(ranges)}};
    if (fm) j["feature_map"] = feature_config_to_json(*fm);
    return j;
}

/// Parse a `label,f0,f1,...` dump back into a training set; the inverse of
/// write_training_csv up to provenance tags.
inline TrainingSet read_training_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("label,f0", 0) != 0)
        throw DataError("training CSV: bad header");
    std::size_t q = 1;
    for (char c : line)
        if (c == ',') ++q;
    --q;  // first column is the label
    TrainingSet ts(q);
    std::vector<double> x(q);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        if (!std::getline(row, field, ',')) throw DataError("training CSV: bad row");
        const int label = std::stoi(field);
        if (label != -1 && label != 1) throw DataError("training CSV: label must be -1 or 1");
        for (std::size_t f = 0; f < q; ++f) {
            if (!std::getline(row, field, ',')) throw DataError("training CSV: short row");
            x[f] = std::stod(field);
        }
        ts.add(x, label, {Strategy::flat, 0});
    }
    return ts;
}

}  // namespace aggseg
