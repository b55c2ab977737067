#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "aggseg/rag.hpp"
#include "aggseg/volume.hpp"

namespace aggseg {

/// Sparse joint-count table between two labelings over their nonzero
/// domain. Sufficient statistic for every region metric here.
struct ContingencyTable {
    std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>> cells;  // seg -> gold -> count
    std::map<std::uint64_t, std::uint64_t> seg_marginal, gold_marginal;
    std::uint64_t total = 0;
};

inline ContingencyTable contingency(const LabelVolume& seg, const LabelVolume& gt) {
    if (seg.shape != gt.shape) throw DataError("contingency: shape mismatch");
    ContingencyTable t;
    for (std::uint64_t i = 0; i < seg.data.size(); ++i) {
        const std::uint64_t s = seg[i], u = gt[i];
        if (s == 0 || u == 0) continue;
        ++t.cells[s][u];
        ++t.seg_marginal[s];
        ++t.gold_marginal[u];
        ++t.total;
    }
    if (t.total == 0) throw DataError("contingency: empty effective domain");
    return t;
}

/// Variation of information split into its two conditional entropies, in
/// bits. `under` H(U|S) charges false merges, `over` H(S|U) false splits.
struct ViResult {
    double under = 0, over = 0, total = 0;
};

inline ViResult vi(const ContingencyTable& t) {
    const double n = double(t.total);
    double sum_rows = 0, sum_cols = 0, sum_cells = 0;
    for (const auto& [s, m] : t.seg_marginal) sum_rows += detail::xlog2(double(m));
    for (const auto& [u, m] : t.gold_marginal) sum_cols += detail::xlog2(double(m));
    for (const auto& [s, row] : t.cells)
        for (const auto& [u, c] : row) sum_cells += detail::xlog2(double(c));
    ViResult r;
    r.under = (sum_rows - sum_cells) / n;  // H(U|S)
    r.over = (sum_cols - sum_cells) / n;   // H(S|U)
    // entropies cannot be negative; clean up -0 and tiny rounding residue
    r.under = std::max(r.under, 0.0);
    r.over = std::max(r.over, 0.0);
    r.total = r.under + r.over;
    return r;
}

namespace detail {

inline std::uint64_t pairs2(std::uint64_t n) { return n * (n - 1) / 2; }

struct PairSums {
    std::uint64_t cells = 0, rows = 0, cols = 0, total = 0;
};

inline PairSums pair_sums(const ContingencyTable& t) {
    PairSums p;
    for (const auto& [s, m] : t.seg_marginal) p.rows += pairs2(m);
    for (const auto& [u, m] : t.gold_marginal) p.cols += pairs2(m);
    for (const auto& [s, row] : t.cells)
        for (const auto& [u, c] : row) p.cells += pairs2(c);
    p.total = pairs2(t.total);
    return p;
}

}  // namespace detail

/// Proportion of point pairs on which the two partitions agree.
inline double rand_index(const ContingencyTable& t) {
    if (t.total < 2) return 1.0;
    const auto p = detail::pair_sums(t);
    const std::uint64_t agree = p.total + 2 * p.cells - p.rows - p.cols;
    return double(agree) / double(p.total);
}

/// 1 - ARI with the standard permutation-model chance correction.
inline double adjusted_rand_error(const ContingencyTable& t) {
    if (t.total < 2) return 0.0;
    const auto p = detail::pair_sums(t);
    const double expected = double(p.rows) * double(p.cols) / double(p.total);
    const double maximum = (double(p.rows) + double(p.cols)) / 2.0;
    if (maximum == expected) return 0.0;  // both partitions trivial and identical
    const double ari = (double(p.cells) - expected) / (maximum - expected);
    return 1.0 - ari;
}

/// Best-Jaccard weighted covering of the gold standard by the segmentation.
inline double covering(const ContingencyTable& t) {
    std::map<std::uint64_t, double> best;  // gold id -> best Jaccard
    for (const auto& [s, row] : t.cells) {
        const double ns = double(t.seg_marginal.at(s));
        for (const auto& [u, c] : row) {
            const double j = double(c) / (ns + double(t.gold_marginal.at(u)) - double(c));
            auto [it, fresh] = best.try_emplace(u, j);
            if (!fresh && j > it->second) it->second = j;
        }
    }
    double sum = 0;
    for (const auto& [u, j] : best) sum += double(t.gold_marginal.at(u)) * j;
    return sum / double(t.total);
}

// ---------------------------------------------------------------------------
// VI breakdown: per-segment conditional entropies against probability mass
// ---------------------------------------------------------------------------

struct BreakdownRow {
    std::uint64_t id = 0;
    double mass = 0;     // P(U=u) or P(S=s)
    double entropy = 0;  // H(S|U=u) or H(U|S=s)
};

struct ViBreakdown {
    std::vector<BreakdownRow> gold_rows;  // one per gold segment: H(S|U=u)
    std::vector<BreakdownRow> seg_rows;   // one per seg segment: H(U|S=s)
};

/// Rows sorted by mass*entropy descending (worst offenders first), id
/// ascending on ties. dot(mass, entropy) over a table reconstitutes the
/// corresponding VI term.
inline ViBreakdown vi_breakdown(const ContingencyTable& t) {
    const double n = double(t.total);
    std::map<std::uint64_t, double> cell_sum_by_gold, cell_sum_by_seg;
    for (const auto& [s, row] : t.cells)
        for (const auto& [u, c] : row) {
            cell_sum_by_gold[u] += detail::xlog2(double(c));
            cell_sum_by_seg[s] += detail::xlog2(double(c));
        }
    ViBreakdown out;
    for (const auto& [u, m] : t.gold_marginal) {
        const double h = std::max(std::log2(double(m)) - cell_sum_by_gold[u] / double(m), 0.0);
        out.gold_rows.push_back({u, double(m) / n, h});
    }
    for (const auto& [s, m] : t.seg_marginal) {
        const double h = std::max(std::log2(double(m)) - cell_sum_by_seg[s] / double(m), 0.0);
        out.seg_rows.push_back({s, double(m) / n, h});
    }
    auto order = [](const BreakdownRow& a, const BreakdownRow& b) {
        const double wa = a.mass * a.entropy, wb = b.mass * b.entropy;
        return wa != wb ? wa > wb : a.id < b.id;
    };
    std::sort(out.gold_rows.begin(), out.gold_rows.end(), order);
    std::sort(out.seg_rows.begin(), out.seg_rows.end(), order);
    return out;
}

// ---------------------------------------------------------------------------
// Incremental contingency under node merges: drives threshold sweeps and
// Rand-index deltas without re-tabulating volumes.
// ---------------------------------------------------------------------------

class MergeContingency {
public:
    using Rows = std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>>;

    MergeContingency(const LabelVolume& seg, const LabelVolume& gt) {
        if (seg.shape != gt.shape) throw DataError("contingency: shape mismatch");
        Rows rows;
        for (std::uint64_t i = 0; i < seg.data.size(); ++i) {
            const std::uint64_t s = seg[i], u = gt[i];
            if (s == 0) continue;
            rows.try_emplace(s);  // ids with only ignore overlap keep an empty row
            if (u == 0) continue;
            ++rows[s][u];
        }
        init(std::move(rows));
    }

    explicit MergeContingency(Rows rows) { init(std::move(rows)); }

    std::uint64_t total() const { return total_; }

    bool has_row(std::uint64_t id) const { return rows_.count(id) != 0; }

    /// Sign of the Rand-index change if rows a and b merged: +1 when RI
    /// would increase, -1 decrease, 0 unchanged. Exact integer arithmetic.
    int delta_ri_sign(std::uint64_t a, std::uint64_t b) const {
        const std::uint64_t lhs = 2 * cross_count(a, b);
        const std::uint64_t rhs = row_marginal_.at(a) * row_marginal_.at(b);
        return lhs > rhs ? +1 : lhs < rhs ? -1 : 0;
    }

    /// Rand-index change if rows a and b merged.
    double delta_ri(std::uint64_t a, std::uint64_t b) const {
        if (total_ < 2) return 0.0;
        const double num = 2.0 * double(cross_count(a, b)) -
                           double(row_marginal_.at(a)) * double(row_marginal_.at(b));
        return num / double(detail::pairs2(total_));
    }

    /// Fuse the absorbed row into the survivor row, updating all sums.
    void merge_rows(std::uint64_t survivor, std::uint64_t absorbed) {
        if (survivor == absorbed) throw DataError("merge of a segmentation id with itself");
        auto sit = rows_.find(survivor);
        auto ait = rows_.find(absorbed);
        if (sit == rows_.end() || ait == rows_.end())
            throw DataError("merge references unknown segmentation id");
        auto& rs = sit->second;
        auto& ra = ait->second;
        const std::uint64_t ms = row_marginal_.at(survivor), ma = row_marginal_.at(absorbed);
        rows_log_ -= detail::xlog2(double(ms)) + detail::xlog2(double(ma));
        rows_pairs_ -= detail::pairs2(ms) + detail::pairs2(ma);
        for (const auto& [u, c] : ra) {
            auto [it, fresh] = rs.try_emplace(u, 0);
            cells_log_ -= detail::xlog2(double(it->second)) + detail::xlog2(double(c));
            cells_pairs_ -= detail::pairs2(it->second) + detail::pairs2(c);
            it->second += c;
            cells_log_ += detail::xlog2(double(it->second));
            cells_pairs_ += detail::pairs2(it->second);
        }
        rows_.erase(ait);
        row_marginal_.erase(absorbed);
        row_marginal_[survivor] = ms + ma;
        rows_log_ += detail::xlog2(double(ms + ma));
        rows_pairs_ += detail::pairs2(ms + ma);
    }

    double h_under() const {  // H(U|S)
        return std::max((rows_log_ - cells_log_) / double(total_), 0.0);
    }
    double h_over() const {  // H(S|U)
        return std::max((cols_log_ - cells_log_) / double(total_), 0.0);
    }

    double rand_index() const {
        const std::uint64_t pt = detail::pairs2(total_);
        if (pt == 0) return 1.0;
        const std::uint64_t agree = pt + 2 * cells_pairs_ - rows_pairs_ - cols_pairs_;
        return double(agree) / double(pt);
    }

    double adjusted_rand_error() const {
        const std::uint64_t pt = detail::pairs2(total_);
        if (pt == 0) return 0.0;
        const double expected = double(rows_pairs_) * double(cols_pairs_) / double(pt);
        const double maximum = (double(rows_pairs_) + double(cols_pairs_)) / 2.0;
        if (maximum == expected) return 0.0;
        return 1.0 - (double(cells_pairs_) - expected) / (maximum - expected);
    }

    double covering() const {
        std::map<std::uint64_t, double> best;
        for (const auto& [s, row] : rows_) {
            const double ns = double(row_marginal_.at(s));
            for (const auto& [u, c] : row) {
                const double j = double(c) / (ns + double(gold_marginal_.at(u)) - double(c));
                auto [it, fresh] = best.try_emplace(u, j);
                if (!fresh && j > it->second) it->second = j;
            }
        }
        double sum = 0;
        for (const auto& [u, j] : best) sum += double(gold_marginal_.at(u)) * j;
        return sum / double(total_);
    }

private:
    void init(Rows rows) {
        rows_ = std::move(rows);
        for (const auto& [s, row] : rows_) {
            std::uint64_t m = 0;
            for (const auto& [u, c] : row) {
                m += c;
                gold_marginal_[u] += c;
                cells_log_ += detail::xlog2(double(c));
                cells_pairs_ += detail::pairs2(c);
            }
            row_marginal_[s] = m;
            total_ += m;
            rows_log_ += detail::xlog2(double(m));
            rows_pairs_ += detail::pairs2(m);
        }
        if (total_ == 0) throw DataError("contingency: empty effective domain");
        for (const auto& [u, m] : gold_marginal_) {
            cols_log_ += detail::xlog2(double(m));
            cols_pairs_ += detail::pairs2(m);
        }
    }

    const std::map<std::uint64_t, std::uint64_t>& row_at(std::uint64_t id) const {
        auto it = rows_.find(id);
        if (it == rows_.end()) throw DataError("unknown segmentation id");
        return it->second;
    }

    std::uint64_t cross_count(std::uint64_t a, std::uint64_t b) const {
        const auto& ra = row_at(a);
        const auto& rb = row_at(b);
        std::uint64_t cross = 0;
        for (const auto& [u, c] : ra) {
            auto it = rb.find(u);
            if (it != rb.end()) cross += c * it->second;
        }
        return cross;
    }

    Rows rows_;
    std::map<std::uint64_t, std::uint64_t> row_marginal_, gold_marginal_;
    std::uint64_t total_ = 0;
    double rows_log_ = 0, cols_log_ = 0, cells_log_ = 0;
    std::uint64_t rows_pairs_ = 0, cols_pairs_ = 0, cells_pairs_ = 0;
};

// ---------------------------------------------------------------------------
// Threshold sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    double threshold = 0;
    double under = 0, over = 0, total = 0;
};

/// VI at each threshold of a merge log, computed by fusing contingency rows
/// along the log (prefix cut per threshold) instead of re-tabulating.
inline std::vector<SweepRow> split_vi_sweep(const LabelVolume& sp, const Dendrogram& d,
                                            const LabelVolume& gt,
                                            const std::vector<double>& thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw DataError("split_vi_sweep: thresholds must ascend");
    MergeContingency mc(sp, gt);
    std::vector<SweepRow> out;
    std::size_t cursor = 0;
    for (double t : thresholds) {
        while (cursor < d.events.size() && d.events[cursor].score < t) {
            mc.merge_rows(d.events[cursor].survivor, d.events[cursor].absorbed);
            ++cursor;
        }
        const double under = mc.h_under(), over = mc.h_over();
        out.push_back({t, under, over, under + over});
    }
    return out;
}

/// Full metric suite along a merge log; one row of every requested metric
/// per threshold.
struct MetricSweepRow {
    double threshold = 0;
    double vi_under = 0, vi_over = 0, vi_total = 0;
    double ri = 0, are = 0, cov = 0;
};

inline std::vector<MetricSweepRow> metric_sweep(const LabelVolume& sp, const Dendrogram& d,
                                                const LabelVolume& gt,
                                                const std::vector<double>& thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw DataError("metric_sweep: thresholds must ascend");
    MergeContingency mc(sp, gt);
    std::vector<MetricSweepRow> out;
    std::size_t cursor = 0;
    for (double t : thresholds) {
        while (cursor < d.events.size() && d.events[cursor].score < t) {
            mc.merge_rows(d.events[cursor].survivor, d.events[cursor].absorbed);
            ++cursor;
        }
        MetricSweepRow row;
        row.threshold = t;
        row.vi_under = mc.h_under();
        row.vi_over = mc.h_over();
        row.vi_total = row.vi_under + row.vi_over;
        row.ri = mc.rand_index();
        row.are = mc.adjusted_rand_error();
        row.cov = mc.covering();
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ODS / OIS threshold selection across images
// ---------------------------------------------------------------------------

struct OdsOis {
    double ods_threshold = 0;
    double ods_score = 0;
    double ois_score = 0;
};

/// ODS: the single threshold optimizing the mean score across images.
/// OIS: mean of the per-image optima. Ties break toward the smaller
/// threshold. Curves must share one threshold grid.
inline OdsOis ods_ois(const std::vector<std::vector<std::pair<double, double>>>& per_image,
                      bool lower_is_better) {
    if (per_image.empty()) throw DataError("ods_ois: no curves");
    const std::size_t k = per_image.front().size();
    if (k == 0) throw DataError("ods_ois: empty curve");
    for (const auto& curve : per_image) {
        if (curve.size() != k) throw DataError("ods_ois: curves disagree on thresholds");
        for (std::size_t i = 0; i < k; ++i)
            if (curve[i].first != per_image.front()[i].first)
                throw DataError("ods_ois: curves disagree on thresholds");
    }
    auto better = [&](double a, double b) { return lower_is_better ? a < b : a > b; };

    OdsOis out;
    double best_mean = 0;
    bool first = true;
    for (std::size_t i = 0; i < k; ++i) {
        double mean = 0;
        for (const auto& curve : per_image) mean += curve[i].second;
        mean /= double(per_image.size());
        if (first || better(mean, best_mean)) {
            first = false;
            best_mean = mean;
            out.ods_threshold = per_image.front()[i].first;
            out.ods_score = mean;
        }
    }
    double ois = 0;
    for (const auto& curve : per_image) {
        double best = curve.front().second;
        for (const auto& [t, v] : curve)
            if (better(v, best)) best = v;
        ois += best;
    }
    out.ois_score = ois / double(per_image.size());
    return out;
}

}  // namespace aggseg
