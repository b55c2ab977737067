#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aggseg/accum.hpp"
#include "aggseg/volume.hpp"

namespace aggseg {

using NodeId = std::uint64_t;

/// A node of the region adjacency graph: a grouping of superpixels with
/// mergeable statistics. The node id is always the minimum id of its
/// constituents.
struct NodeRecord {
    NodeId id = 0;
    std::vector<NodeId> members;  // constituent superpixel ids, ascending
    std::uint64_t size = 0;       // voxel count
    std::vector<CueAccumulator> cue;  // one per channel
    SpatialAccumulator spatial;       // populated when the rag tracks geometry
};

struct EdgeKey {
    NodeId u = 0, v = 0;  // u < v
    friend bool operator<(const EdgeKey& a, const EdgeKey& b) {
        return a.u != b.u ? a.u < b.u : a.v < b.v;
    }
    friend bool operator==(const EdgeKey& a, const EdgeKey& b) = default;
};

inline EdgeKey edge_key(NodeId a, NodeId b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

/// Statistics of the boundary between two nodes. The version stamp
/// invalidates heap entries whenever either endpoint changes.
struct EdgeRecord {
    std::uint64_t boundary_count = 0;     // face-adjacent voxel pairs straddling the edge
    std::vector<CueAccumulator> boundary_cue;  // one sample per straddling pair, per channel
    std::uint64_t version = 0;
};

struct MergeEvent {
    NodeId survivor = 0, absorbed = 0;
    double score = 0;
};

/// Ordered merge log. Thresholding it reproduces the segmentation at any
/// scale. Node ids coincide with superpixel labels (no renumbering), so the
/// initial relabeling is the identity.
struct Dendrogram {
    std::vector<MergeEvent> events;
};

class Rag;

/// Merge priority function: scores an edge in [0,1]; lower scores merge
/// sooner. Must be a pure function of the two endpoint records and their
/// shared edge record.
struct Policy {
    std::string name;
    std::function<double(const Rag&, NodeId, NodeId)> score;

    double operator()(const Rag& rag, NodeId u, NodeId v) const { return score(rag, u, v); }

    static Policy mean_boundary(std::size_t channel);
    static Policy random(std::uint64_t seed);
};

struct HeapEntry {
    double score = 0;
    NodeId u = 0, v = 0;
    std::uint64_t version = 0;
    // min-heap order: score, then smaller u, smaller v
    friend bool operator>(const HeapEntry& a, const HeapEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.u != b.u) return a.u > b.u;
        if (a.v != b.v) return a.v > b.v;
        return a.version > b.version;
    }
};

/// Region adjacency graph with a lazy-deletion priority heap. Entries are
/// never removed eagerly; an entry is live iff its version matches the
/// edge's current version.
class Rag {
public:
    struct Config {
        Connectivity conn = Connectivity::face;
        bool with_spatial = false;
        std::size_t hist_bins = 25;
    };

    std::size_t channels = 0;
    std::size_t ndim = 0;
    Config config;

    const std::map<NodeId, NodeRecord>& nodes() const { return nodes_; }
    const std::map<EdgeKey, EdgeRecord>& edges() const { return edges_; }

    bool has_node(NodeId id) const { return nodes_.count(id) != 0; }
    bool has_edge(NodeId a, NodeId b) const { return edges_.count(edge_key(a, b)) != 0; }

    const NodeRecord& node(NodeId id) const {
        auto it = nodes_.find(id);
        if (it == nodes_.end()) throw DataError("rag: unknown node id");
        return it->second;
    }

    const EdgeRecord& edge(NodeId a, NodeId b) const {
        auto it = edges_.find(edge_key(a, b));
        if (it == edges_.end()) throw DataError("rag: edge does not exist");
        return it->second;
    }

    std::vector<NodeId> neighbors(NodeId id) const {
        auto it = adj_.find(id);
        if (it == adj_.end()) return {};
        return {it->second.begin(), it->second.end()};
    }

    /// Invalidate all existing heap entries and push a fresh, fully scored
    /// entry per edge.
    void rescore(const Policy& policy) {
        heap_.clear();
        for (auto& [key, rec] : edges_) {
            ++rec.version;
            push_entry({policy(*this, key.u, key.v), key.u, key.v, rec.version});
        }
    }

    /// Pop the live minimum (score, u, v); stale entries are discarded on
    /// the way. Empty when the heap is exhausted.
    std::optional<HeapEntry> pop_live() {
        while (!heap_.empty()) {
            std::pop_heap(heap_.begin(), heap_.end(), std::greater<HeapEntry>{});
            HeapEntry e = heap_.back();
            heap_.pop_back();
            auto it = edges_.find({e.u, e.v});
            if (it != edges_.end() && it->second.version == e.version) return e;
        }
        return std::nullopt;
    }

    /// Live entries currently in the heap (diagnostic view).
    std::vector<HeapEntry> live_entries() const {
        std::vector<HeapEntry> live;
        for (const auto& e : heap_) {
            auto it = edges_.find({e.u, e.v});
            if (it != edges_.end() && it->second.version == e.version) live.push_back(e);
        }
        return live;
    }

    /// Merge the endpoints of an existing edge. The smaller id survives;
    /// statistics add, parallel edges fuse, and every surviving edge
    /// incident to the survivor is re-scored under the given policy.
    NodeId merge_nodes(NodeId a, NodeId b, const Policy& policy) {
        const EdgeKey merged = edge_key(a, b);
        if (edges_.find(merged) == edges_.end()) throw DataError("merge_nodes: edge does not exist");
        const NodeId survivor = std::min(a, b), absorbed = std::max(a, b);

        NodeRecord& ns = nodes_.at(survivor);
        NodeRecord& na = nodes_.at(absorbed);
        ns.size += na.size;
        {
            std::vector<NodeId> fused;
            fused.reserve(ns.members.size() + na.members.size());
            std::merge(ns.members.begin(), ns.members.end(), na.members.begin(), na.members.end(),
                       std::back_inserter(fused));
            ns.members = std::move(fused);
        }
        for (std::size_t c = 0; c < channels; ++c) ns.cue[c].merge(na.cue[c]);
        if (config.with_spatial) ns.spatial.merge(na.spatial);

        const std::vector<NodeId> absorbed_nbrs(adj_[absorbed].begin(), adj_[absorbed].end());
        for (NodeId w : absorbed_nbrs) {
            if (w == survivor) continue;
            const EdgeKey old_key = edge_key(absorbed, w);
            const EdgeKey new_key = edge_key(survivor, w);
            auto old_it = edges_.find(old_key);
            auto new_it = edges_.find(new_key);
            if (new_it != edges_.end()) {
                EdgeRecord& dst = new_it->second;
                EdgeRecord& src = old_it->second;
                dst.boundary_count += src.boundary_count;
                for (std::size_t c = 0; c < channels; ++c)
                    dst.boundary_cue[c].merge(src.boundary_cue[c]);
            } else {
                edges_.emplace(new_key, std::move(old_it->second));
            }
            edges_.erase(old_it);
            adj_[w].erase(absorbed);
            adj_[w].insert(survivor);
            adj_[survivor].insert(w);
        }

        edges_.erase(merged);
        adj_[survivor].erase(absorbed);
        adj_.erase(absorbed);
        nodes_.erase(absorbed);

        for (NodeId w : adj_[survivor]) {
            const EdgeKey k = edge_key(survivor, w);
            EdgeRecord& rec = edges_.at(k);
            ++rec.version;
            push_entry({policy(*this, k.u, k.v), k.u, k.v, rec.version});
        }
        return survivor;
    }

    friend Rag build_rag(const LabelVolume&, const CueVolume&, const Config&);

private:
    void push_entry(HeapEntry e) {
        heap_.push_back(e);
        std::push_heap(heap_.begin(), heap_.end(), std::greater<HeapEntry>{});
    }

    std::map<NodeId, NodeRecord> nodes_;
    std::map<EdgeKey, EdgeRecord> edges_;
    std::map<NodeId, std::set<NodeId>> adj_;
    std::vector<HeapEntry> heap_;
};

inline Policy Policy::mean_boundary(std::size_t channel) {
    return {"mean", [channel](const Rag& rag, NodeId u, NodeId v) {
                return rag.edge(u, v).boundary_cue.at(channel).mean();
            }};
}

inline Policy Policy::random(std::uint64_t seed) {
    return {"random", [seed](const Rag&, NodeId u, NodeId v) {
                SplitMix64 g(seed ^ (u * 0x9E3779B97F4A7C15ull) ^ (v * 0xC2B2AE3D27D4EB4Full));
                return g.unit();
            }};
}

/// Build the region adjacency graph of a superpixel map. One node per
/// nonzero label; an edge wherever an adjacent voxel pair carries two
/// distinct nonzero labels, each such pair contributing the mean of its two
/// cue values to the edge's boundary statistics.
inline Rag build_rag(const LabelVolume& sp, const CueVolume& cues, const Rag::Config& config) {
    if (sp.shape != cues.shape) throw DataError("build_rag: label/cue shape mismatch");
    const Shape& shape = sp.shape;
    const std::size_t channels = cues.channels;

    Rag rag;
    rag.channels = channels;
    rag.ndim = shape.ndim();
    rag.config = config;

    // node statistics
    std::map<NodeId, std::vector<HullPoint>> points;
    detail::for_each_voxel(shape, [&](std::uint64_t flat, std::span<const std::uint64_t> coords) {
        const NodeId label = sp[flat];
        if (label == 0) return;
        auto [it, fresh] = rag.nodes_.try_emplace(label);
        NodeRecord& node = it->second;
        if (fresh) {
            node.id = label;
            node.members = {label};
            node.cue.assign(channels, CueAccumulator(config.hist_bins));
            if (config.with_spatial) node.spatial = SpatialAccumulator(shape.ndim());
        }
        ++node.size;
        for (std::size_t c = 0; c < channels; ++c) node.cue[c].add_sample(cues.at(c, flat));
        if (config.with_spatial) {
            node.spatial.add_voxel(coords);
            if (shape.ndim() == 2)
                points[label].push_back({std::int64_t(coords[0]), std::int64_t(coords[1])});
        }
    });
    if (rag.nodes_.size() < 2) throw DataError("build_rag: need at least 2 regions");
    for (auto& [label, pts] : points) rag.nodes_.at(label).spatial.hull = convex_hull(std::move(pts));

    // edge statistics
    auto add_pair = [&](std::uint64_t a, std::uint64_t b) {
        const NodeId la = sp[a], lb = sp[b];
        if (la == 0 || lb == 0 || la == lb) return;
        auto [it, fresh] = rag.edges_.try_emplace(edge_key(la, lb));
        EdgeRecord& e = it->second;
        if (fresh) e.boundary_cue.assign(channels, CueAccumulator(config.hist_bins));
        ++e.boundary_count;
        for (std::size_t c = 0; c < channels; ++c)
            e.boundary_cue[c].add_sample((cues.at(c, a) + cues.at(c, b)) / 2.0);
    };
    if (config.conn == Connectivity::face) {
        detail::for_each_face_pair(shape, add_pair);
    } else {
        detail::NeighborTable nbr(shape, Connectivity::full);
        detail::for_each_voxel(shape, [&](std::uint64_t flat, std::span<const std::uint64_t> coords) {
            detail::for_each_neighbor(shape, nbr, flat, coords, [&](std::uint64_t w) {
                if (w > flat) add_pair(flat, w);
            });
        });
    }

    for (const auto& [key, rec] : rag.edges_) {
        rag.adj_[key.u].insert(key.v);
        rag.adj_[key.v].insert(key.u);
    }
    return rag;
}

/// Greedy agglomeration: pop the live heap minimum and merge until the
/// minimum reaches the threshold or the heap runs dry. Ties break on
/// (score, smaller u, smaller v).
inline Dendrogram agglomerate(Rag& rag, const Policy& policy, double threshold) {
    rag.rescore(policy);
    Dendrogram d;
    while (auto e = rag.pop_live()) {
        if (!(e->score < threshold)) break;
        const NodeId survivor = rag.merge_nodes(e->u, e->v, policy);
        d.events.push_back({survivor, e->u == survivor ? e->v : e->u, e->score});
    }
    return d;
}

/// Replay the merge log onto a superpixel map: events apply in order while
/// score < t, stopping at the first event at or above t (prefix cut), and
/// labels map to the id of their surviving node.
inline LabelVolume apply_threshold(const LabelVolume& sp, const Dendrogram& d, double t) {
    std::set<NodeId> known;
    for (auto label : sp.data)
        if (label != 0) known.insert(label);

    // union-find keyed by node id; the root is always the minimum id of the
    // component, which is exactly the surviving node id
    std::map<NodeId, NodeId> parent;
    auto find = [&parent](NodeId x) {
        NodeId root = x;
        while (true) {
            auto it = parent.find(root);
            if (it == parent.end() || it->second == root) break;
            root = it->second;
        }
        while (x != root) {  // path compression
            auto it = parent.find(x);
            x = it->second;
            it->second = root;
        }
        return root;
    };

    for (const auto& ev : d.events) {
        if (!(ev.score < t)) break;  // prefix cut
        if (!known.count(ev.survivor) || !known.count(ev.absorbed))
            throw DataError("apply_threshold: dendrogram references unknown ids");
        known.erase(ev.absorbed);
        const NodeId rs = find(ev.survivor), ra = find(ev.absorbed);
        if (rs == ra) throw DataError("apply_threshold: repeated merge in dendrogram");
        parent[std::max(rs, ra)] = std::min(rs, ra);
    }

    LabelVolume out(sp.shape);
    for (std::uint64_t i = 0; i < sp.data.size(); ++i)
        out[i] = sp[i] == 0 ? 0 : find(sp[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Dendrogram CSV: order,survivor,absorbed,score
// ---------------------------------------------------------------------------

inline void write_dendrogram_csv(const Dendrogram& d, std::ostream& out) {
    out << "order,survivor,absorbed,score\n";
    for (std::size_t i = 0; i < d.events.size(); ++i) {
        const auto& ev = d.events[i];
        out << i << ',' << ev.survivor << ',' << ev.absorbed << ','
            << format_real17(ev.score) << '\n';
    }
}

inline Dendrogram read_dendrogram_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "order,survivor,absorbed,score")
        throw DataError("dendrogram CSV: bad header");
    Dendrogram d;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        MergeEvent ev;
        std::getline(row, field, ',');  // order, ignored
        if (!std::getline(row, field, ',')) throw DataError("dendrogram CSV: bad row");
        ev.survivor = std::stoull(field);
        if (!std::getline(row, field, ',')) throw DataError("dendrogram CSV: bad row");
        ev.absorbed = std::stoull(field);
        if (!std::getline(row, field, ',')) throw DataError("dendrogram CSV: bad row");
        ev.score = std::stod(field);
        d.events.push_back(ev);
    }
    return d;
}

}  // namespace aggseg
