#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "aggseg/util.hpp"

namespace aggseg {

/// Mergeable per-channel statistics of a set of samples in [0,1]: count, raw
/// power sums up to order 4, and a fixed-bin histogram. Merging two
/// accumulators is component-wise addition, so statistics of a fused region
/// never need a rescan.
struct CueAccumulator {
    std::uint64_t count = 0;
    double m1 = 0, m2 = 0, m3 = 0, m4 = 0;  // sum x, x^2, x^3, x^4
    std::vector<std::uint64_t> hist;

    CueAccumulator() = default;
    explicit CueAccumulator(std::size_t bins) : hist(bins, 0) {}

    std::size_t bins() const { return hist.size(); }

    void add_sample(double x) {
        ++count;
        const double x2 = x * x;
        m1 += x;
        m2 += x2;
        m3 += x2 * x;
        m4 += x2 * x2;
        auto b = std::size_t(x * double(hist.size()));
        if (b >= hist.size()) b = hist.size() - 1;
        ++hist[b];
    }

    void merge(const CueAccumulator& o) {
        count += o.count;
        m1 += o.m1;
        m2 += o.m2;
        m3 += o.m3;
        m4 += o.m4;
        for (std::size_t i = 0; i < hist.size(); ++i) hist[i] += o.hist[i];
    }

    double mean() const { return m1 / double(count); }

    /// Central moment of order 2..4, from the raw sums.
    double central_moment(int order) const {
        const double n = double(count);
        const double mu = m1 / n;
        switch (order) {
            case 2:
                return m2 / n - mu * mu;
            case 3:
                return m3 / n - 3 * mu * (m2 / n) + 2 * mu * mu * mu;
            case 4:
                return m4 / n - 4 * mu * (m3 / n) + 6 * mu * mu * (m2 / n) - 3 * mu * mu * mu * mu;
            default:
                throw InternalError("central_moment: order must be 2..4");
        }
    }

    std::vector<double> normalized_hist() const {
        std::vector<double> h(hist.size());
        for (std::size_t i = 0; i < hist.size(); ++i) h[i] = double(hist[i]) / double(count);
        return h;
    }

    /// Approximate quantile by linear interpolation of the histogram, each
    /// bin treated as uniform over its interval of [0,1].
    double quantile(double p) const {
        if (count == 0) throw DataError("quantile of empty accumulator");
        const std::size_t B = hist.size();
        double cum = 0;
        for (std::size_t i = 0; i < B; ++i) {
            const double h = double(hist[i]) / double(count);
            if (cum + h >= p && h > 0) {
                return (double(i) + (p - cum) / h) / double(B);
            }
            cum += h;
        }
        // p at or beyond the last mass: right edge of the last occupied bin
        for (std::size_t i = B; i-- > 0;)
            if (hist[i] > 0) return double(i + 1) / double(B);
        return 0.0;
    }
};

// ---------------------------------------------------------------------------
// 2D convex hulls over integer voxel coordinates
// ---------------------------------------------------------------------------

using HullPoint = std::array<std::int64_t, 2>;

namespace detail {

inline std::int64_t cross(const HullPoint& o, const HullPoint& a, const HullPoint& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

}  // namespace detail

/// Strict convex hull (collinear interior points dropped) by monotone chain,
/// counter-clockwise starting at the lexicographically smallest point.
/// Degenerate inputs give back the deduplicated point or segment endpoints.
inline std::vector<HullPoint> convex_hull(std::vector<HullPoint> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const std::size_t n = pts.size();
    if (n <= 2) return pts;
    std::vector<HullPoint> h(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {  // lower
        while (k >= 2 && detail::cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
        while (k >= t && detail::cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    // collinear input collapses to a segment
    if (h.size() < 2) {
        h.clear();
        h.push_back(pts.front());
        h.push_back(pts.back());
    }
    return h;
}

/// Area of the union of unit squares centered on the given hull vertices'
/// region, i.e. the hull of all voxel corners. Works on the hull of voxel
/// centers; corners live on the half-integer grid so coordinates are doubled
/// to stay exact. A single voxel has area 1.
inline double hull_area_unit_squares(const std::vector<HullPoint>& hull_of_centers) {
    std::vector<HullPoint> corners;
    corners.reserve(hull_of_centers.size() * 4);
    for (const auto& p : hull_of_centers)
        for (int dx : {-1, 1})
            for (int dy : {-1, 1}) corners.push_back({2 * p[0] + dx, 2 * p[1] + dy});
    auto h = convex_hull(std::move(corners));
    if (h.size() < 3) return 0.0;
    std::int64_t twice = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& a = h[i];
        const auto& b = h[(i + 1) % h.size()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    if (twice < 0) twice = -twice;
    return double(twice) / 8.0;  // /2 shoelace, /4 doubled grid
}

/// Mergeable spatial statistics of a region: coordinate sums, second-order
/// coordinate sums (upper triangle, axis-pair order (0,0),(0,1),...,(d-1,d-1)),
/// and the convex hull of member voxel centers when tracked (2D only).
struct SpatialAccumulator {
    std::uint64_t count = 0;
    std::size_t ndim = 0;
    std::array<double, 8> coord_sum{};
    std::array<double, 36> coord_sum2{};
    std::vector<HullPoint> hull;

    SpatialAccumulator() = default;
    explicit SpatialAccumulator(std::size_t d) : ndim(d) {}

    static std::size_t pair_index(std::size_t d, std::size_t a, std::size_t b) {
        // row-major upper triangle
        return a * d - a * (a + 1) / 2 + b;
    }

    void add_voxel(std::span<const std::uint64_t> coords) {
        ++count;
        for (std::size_t a = 0; a < ndim; ++a) {
            coord_sum[a] += double(coords[a]);
            for (std::size_t b = a; b < ndim; ++b)
                coord_sum2[pair_index(ndim, a, b)] += double(coords[a]) * double(coords[b]);
        }
    }

    void merge(const SpatialAccumulator& o) {
        count += o.count;
        for (std::size_t a = 0; a < ndim; ++a) coord_sum[a] += o.coord_sum[a];
        const std::size_t pairs = ndim * (ndim + 1) / 2;
        for (std::size_t i = 0; i < pairs; ++i) coord_sum2[i] += o.coord_sum2[i];
        if (!hull.empty() || !o.hull.empty()) {
            std::vector<HullPoint> pts = hull;
            pts.insert(pts.end(), o.hull.begin(), o.hull.end());
            hull = convex_hull(std::move(pts));
        }
    }

    double centroid(std::size_t axis) const { return coord_sum[axis] / double(count); }

    /// Centered second-moment (covariance) entry for an axis pair.
    double covariance(std::size_t a, std::size_t b) const {
        const double n = double(count);
        const std::size_t lo = std::min(a, b), hi = std::max(a, b);
        return coord_sum2[pair_index(ndim, lo, hi)] / n - centroid(a) * centroid(b);
    }
};

}  // namespace aggseg
