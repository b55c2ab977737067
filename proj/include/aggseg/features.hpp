#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aggseg/rag.hpp"

namespace aggseg {

enum class ManagerKind { histogram, moments, geometry, orientation, hull };

struct ManagerConfig {
    ManagerKind kind;
    std::size_t bins = 25;       // histogram manager only
    std::size_t quantiles = 9;   // histogram manager only
};

/// Serializable description of a feature map. Train-time and test-time maps
/// must be identical, so this travels inside the model file.
struct FeatureConfig {
    std::size_t channels = 1;
    std::vector<ManagerConfig> managers;
};

/// Default map: histogram + moments + geometry, plus orientation and hull
/// terms on 2D data.
inline FeatureConfig default_feature_config(std::size_t channels, std::size_t ndim,
                                            std::size_t bins = 25, std::size_t quantiles = 9) {
    FeatureConfig cfg;
    cfg.channels = channels;
    cfg.managers.push_back({ManagerKind::histogram, bins, quantiles});
    cfg.managers.push_back({ManagerKind::moments});
    cfg.managers.push_back({ManagerKind::geometry});
    if (ndim == 2) {
        cfg.managers.push_back({ManagerKind::orientation});
        cfg.managers.push_back({ManagerKind::hull});
    }
    return cfg;
}

namespace detail {

inline double hist_entropy(const std::vector<double>& h) {
    double s = 0;
    for (double x : h) s -= xlog2(x);
    return s;
}

}  // namespace detail

/// Jensen-Shannon divergence between two normalized histograms, base-2 logs,
/// so the result lives in [0, 1] bits.
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = (p[i] + q[i]) / 2.0;
    double jsd = detail::hist_entropy(m) -
                 (detail::hist_entropy(p) + detail::hist_entropy(q)) / 2.0;
    return std::clamp(jsd, 0.0, 1.0);
}

/// Per channel: the normalized histograms of u, v and their boundary,
/// approximate quantiles of each at probabilities k/(Q+1), and the JS
/// divergence between the two region histograms.
inline std::vector<double> histogram_features(const NodeRecord& u, const NodeRecord& v,
                                              const EdgeRecord& e, std::size_t bins,
                                              std::size_t quantiles) {
    std::vector<double> out;
    const std::size_t channels = u.cue.size();
    for (std::size_t c = 0; c < channels; ++c) {
        const CueAccumulator* accs[3] = {&u.cue[c], &v.cue[c], &e.boundary_cue[c]};
        for (const auto* acc : accs) {
            if (acc->count == 0) throw DataError("histogram_features: empty accumulator");
            if (acc->bins() != bins) throw DataError("histogram_features: bin count mismatch");
        }
        for (const auto* acc : accs)
            for (double h : acc->normalized_hist()) out.push_back(h);
        for (const auto* acc : accs)
            for (std::size_t k = 1; k <= quantiles; ++k)
                out.push_back(acc->quantile(double(k) / double(quantiles + 1)));
        out.push_back(js_divergence(u.cue[c].normalized_hist(), v.cue[c].normalized_hist()));
    }
    return out;
}

/// Per channel and per record (u, v, boundary): log count, mean and central
/// moments 2..4, plus the absolute differences of the region moments.
inline std::vector<double> moment_features(const NodeRecord& u, const NodeRecord& v,
                                           const EdgeRecord& e) {
    std::vector<double> out;
    const std::size_t channels = u.cue.size();
    for (std::size_t c = 0; c < channels; ++c) {
        const CueAccumulator* accs[3] = {&u.cue[c], &v.cue[c], &e.boundary_cue[c]};
        for (const auto* acc : accs) {
            out.push_back(std::log(double(acc->count)));
            out.push_back(acc->mean());
            out.push_back(acc->central_moment(2));
            out.push_back(acc->central_moment(3));
            out.push_back(acc->central_moment(4));
        }
        out.push_back(std::abs(u.cue[c].mean() - v.cue[c].mean()));
        for (int k = 2; k <= 4; ++k)
            out.push_back(std::abs(u.cue[c].central_moment(k) - v.cue[c].central_moment(k)));
    }
    return out;
}

/// Size and boundary-length terms on log scale, plus the size ratio.
inline std::vector<double> geometry_features(const NodeRecord& u, const NodeRecord& v,
                                             const EdgeRecord& e) {
    const double su = double(u.size), sv = double(v.size);
    return {std::log(su), std::log(sv), std::log(su + sv), std::log(double(e.boundary_count)),
            std::min(su, sv) / std::max(su, sv)};
}

/// 2D orientation terms: angle between the regions' principal axes and the
/// angles between each axis and the centroid-connecting segment, all in
/// [0, pi/2]. Isotropic (degenerate) regions zero their angles and raise the
/// trailing degeneracy flag.
inline std::vector<double> orientation_features(const NodeRecord& u, const NodeRecord& v) {
    if (u.spatial.ndim != 2 || u.spatial.count == 0 || v.spatial.count == 0)
        throw DataError("orientation_features: missing 2D spatial accumulators");

    struct Axis {
        double x = 0, y = 0;
        bool degenerate = false;
    };
    auto principal = [](const SpatialAccumulator& s) {
        Axis a;
        const double cxx = s.covariance(0, 0), cyy = s.covariance(1, 1), cxy = s.covariance(0, 1);
        const double disc = std::sqrt((cxx - cyy) * (cxx - cyy) + 4 * cxy * cxy);
        const double scale = std::max({std::abs(cxx), std::abs(cyy), std::abs(cxy)});
        if (disc <= 1e-12 * std::max(scale, 1e-30) || scale <= 1e-30) {
            a.degenerate = true;  // isotropic second moment
            return a;
        }
        const double theta = 0.5 * std::atan2(2 * cxy, cxx - cyy);
        a.x = std::cos(theta);
        a.y = std::sin(theta);
        return a;
    };
    auto line_angle = [](double ax, double ay, double bx, double by) {
        const double na = std::hypot(ax, ay), nb = std::hypot(bx, by);
        const double c = std::clamp(std::abs(ax * bx + ay * by) / (na * nb), 0.0, 1.0);
        return std::acos(c);
    };

    const Axis au = principal(u.spatial), av = principal(v.spatial);
    const double dx = v.spatial.centroid(0) - u.spatial.centroid(0);
    const double dy = v.spatial.centroid(1) - u.spatial.centroid(1);
    const bool seg_degenerate = std::hypot(dx, dy) <= 1e-12;
    const bool degenerate = au.degenerate || av.degenerate || seg_degenerate;

    double angle_axes = 0, angle_u = 0, angle_v = 0;
    if (!au.degenerate && !av.degenerate) angle_axes = line_angle(au.x, au.y, av.x, av.y);
    if (!au.degenerate && !seg_degenerate) angle_u = line_angle(au.x, au.y, dx, dy);
    if (!av.degenerate && !seg_degenerate) angle_v = line_angle(av.x, av.y, dx, dy);
    return {angle_axes, angle_u, angle_v, degenerate ? 1.0 : 0.0};
}

/// Convexity terms: hull area over region size for each region and for
/// their union, with voxels counted as unit squares.
inline std::vector<double> hull_features(const NodeRecord& u, const NodeRecord& v) {
    if (u.spatial.hull.empty() || v.spatial.hull.empty())
        throw DataError("hull_features: missing hull vertices");
    std::vector<HullPoint> uni = u.spatial.hull;
    uni.insert(uni.end(), v.spatial.hull.begin(), v.spatial.hull.end());
    const double area_u = hull_area_unit_squares(u.spatial.hull);
    const double area_v = hull_area_unit_squares(v.spatial.hull);
    const double area_uv = hull_area_unit_squares(convex_hull(std::move(uni)));
    return {area_u / double(u.size), area_v / double(v.size),
            area_uv / double(u.size + v.size)};
}

/// Ordered composition of feature managers; output length q is fixed at
/// construction and identical for every edge of a compatible rag.
class FeatureMap {
public:
    FeatureMap() = default;

    explicit FeatureMap(FeatureConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.channels == 0) throw DataError("feature map needs at least one channel");
        if (cfg_.managers.empty()) throw DataError("feature map needs at least one manager");
        q_ = 0;
        for (const auto& m : cfg_.managers) {
            switch (m.kind) {
                case ManagerKind::histogram:
                    if (m.bins == 0 || m.quantiles == 0)
                        throw DataError("histogram manager needs bins and quantiles");
                    q_ += cfg_.channels * (3 * m.bins + 3 * m.quantiles + 1);
                    break;
                case ManagerKind::moments:
                    q_ += cfg_.channels * 19;
                    break;
                case ManagerKind::geometry:
                    q_ += 5;
                    break;
                case ManagerKind::orientation:
                    q_ += 4;
                    break;
                case ManagerKind::hull:
                    q_ += 3;
                    break;
            }
        }
    }

    const FeatureConfig& config() const { return cfg_; }
    std::size_t size() const { return q_; }

    bool needs_spatial() const {
        for (const auto& m : cfg_.managers)
            if (m.kind == ManagerKind::orientation || m.kind == ManagerKind::hull) return true;
        return false;
    }

    std::size_t hist_bins() const {
        for (const auto& m : cfg_.managers)
            if (m.kind == ManagerKind::histogram) return m.bins;
        return 25;
    }

    std::vector<double> compute(const Rag& rag, NodeId a, NodeId b) const {
        if (rag.channels != cfg_.channels)
            throw DataError("feature map channel count does not match rag");
        const NodeId lo = std::min(a, b), hi = std::max(a, b);
        const NodeRecord& u = rag.node(lo);
        const NodeRecord& v = rag.node(hi);
        const EdgeRecord& e = rag.edge(lo, hi);

        std::vector<double> out;
        out.reserve(q_);
        auto append = [&out](std::vector<double> part) {
            out.insert(out.end(), part.begin(), part.end());
        };
        for (const auto& m : cfg_.managers) {
            switch (m.kind) {
                case ManagerKind::histogram:
                    append(histogram_features(u, v, e, m.bins, m.quantiles));
                    break;
                case ManagerKind::moments:
                    append(moment_features(u, v, e));
                    break;
                case ManagerKind::geometry:
                    append(geometry_features(u, v, e));
                    break;
                case ManagerKind::orientation:
                    append(orientation_features(u, v));
                    break;
                case ManagerKind::hull:
                    append(hull_features(u, v));
                    break;
            }
        }
        if (out.size() != q_) throw InternalError("feature map produced wrong length");
        for (double x : out)
            if (!std::isfinite(x)) throw InternalError("feature map produced non-finite value");
        return out;
    }

private:
    FeatureConfig cfg_;
    std::size_t q_ = 0;
};

// ---------------------------------------------------------------------------
// JSON form of the feature map configuration (embedded in model files)
// ---------------------------------------------------------------------------

inline const char* manager_kind_name(ManagerKind k) {
    switch (k) {
        case ManagerKind::histogram: return "histogram";
        case ManagerKind::moments: return "moments";
        case ManagerKind::geometry: return "geometry";
        case ManagerKind::orientation: return "orientation";
        case ManagerKind::hull: return "hull";
    }
    throw InternalError("unreachable manager kind");
}

inline nlohmann::json feature_config_to_json(const FeatureConfig& cfg) {
    nlohmann::json managers = nlohmann::json::array();
    for (const auto& m : cfg.managers) {
        nlohmann::json j{{"type", manager_kind_name(m.kind)}};
        if (m.kind == ManagerKind::histogram) {
            j["bins"] = m.bins;
            j["quantiles"] = m.quantiles;
        }
        managers.push_back(std::move(j));
    }
    return nlohmann::json{{"channels", cfg.channels}, {"managers", std::move(managers)}};
}

inline FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    FeatureConfig cfg;
    cfg.channels = j.at("channels").get<std::size_t>();
    for (const auto& m : j.at("managers")) {
        const std::string type = m.at("type").get<std::string>();
        ManagerConfig mc{ManagerKind::moments};
        if (type == "histogram") {
            mc.kind = ManagerKind::histogram;
            mc.bins = m.at("bins").get<std::size_t>();
            mc.quantiles = m.at("quantiles").get<std::size_t>();
        } else if (type == "moments") {
            mc.kind = ManagerKind::moments;
        } else if (type == "geometry") {
            mc.kind = ManagerKind::geometry;
        } else if (type == "orientation") {
            mc.kind = ManagerKind::orientation;
        } else if (type == "hull") {
            mc.kind = ManagerKind::hull;
        } else {
            throw DataError("unknown feature manager type: " + type);
        }
        cfg.managers.push_back(mc);
    }
    return cfg;
}

}  // namespace aggseg
