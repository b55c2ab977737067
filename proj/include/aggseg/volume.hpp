#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <queue>
#include <span>
#include <variant>
#include <vector>

#include "aggseg/util.hpp"

namespace aggseg {

constexpr std::size_t kMaxDims = 8;

/// Extents of an n-dimensional dense array, row-major (last axis fastest).
class Shape {
public:
    Shape() = default;

    explicit Shape(std::vector<std::uint64_t> extents) : extents_(std::move(extents)) {
        if (extents_.empty() || extents_.size() > kMaxDims)
            throw DataError("shape must have between 1 and 8 dimensions");
        for (auto e : extents_)
            if (e == 0) throw DataError("shape extents must be positive");
    }

    std::size_t ndim() const { return extents_.size(); }
    std::uint64_t extent(std::size_t axis) const { return extents_[axis]; }
    const std::vector<std::uint64_t>& extents() const { return extents_; }

    std::uint64_t voxels() const {
        std::uint64_t n = 1;
        for (auto e : extents_) n *= e;
        return n;
    }

    /// Row-major strides: stride of the last axis is 1.
    std::array<std::uint64_t, kMaxDims> strides() const {
        std::array<std::uint64_t, kMaxDims> s{};
        std::uint64_t acc = 1;
        for (std::size_t a = ndim(); a-- > 0;) {
            s[a] = acc;
            acc *= extents_[a];
        }
        return s;
    }

    std::uint64_t flatten(std::span<const std::uint64_t> coords) const {
        auto s = strides();
        std::uint64_t f = 0;
        for (std::size_t a = 0; a < ndim(); ++a) f += coords[a] * s[a];
        return f;
    }

    void unflatten(std::uint64_t flat, std::span<std::uint64_t> coords) const {
        for (std::size_t a = ndim(); a-- > 0;) {
            coords[a] = flat % extents_[a];
            flat /= extents_[a];
        }
    }

    bool operator==(const Shape& o) const { return extents_ == o.extents_; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

private:
    std::vector<std::uint64_t> extents_;
};

/// Dense map of voxel -> region id. Label 0 is reserved for boundary/ignore
/// voxels that belong to no region.
struct LabelVolume {
    Shape shape;
    std::vector<std::uint64_t> data;

    LabelVolume() = default;
    LabelVolume(Shape s, std::vector<std::uint64_t> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape.voxels()) throw DataError("label payload length mismatch");
    }
    explicit LabelVolume(Shape s) : shape(std::move(s)), data(shape.voxels(), 0) {}

    std::uint64_t operator[](std::uint64_t flat) const { return data[flat]; }
    std::uint64_t& operator[](std::uint64_t flat) { return data[flat]; }
};

/// Dense stack of real-valued cue channels in [0,1], channel-major then
/// row-major. Channel 0 holds the boundary probability by convention.
struct CueVolume {
    Shape shape;
    std::size_t channels = 1;
    std::vector<double> data;

    CueVolume() = default;
    CueVolume(Shape s, std::size_t ch, std::vector<double> d)
        : shape(std::move(s)), channels(ch), data(std::move(d)) {
        if (channels == 0) throw DataError("cue volume needs at least one channel");
        if (data.size() != channels * shape.voxels()) throw DataError("cue payload length mismatch");
    }
    CueVolume(Shape s, std::size_t ch) : shape(std::move(s)), channels(ch) {
        if (channels == 0) throw DataError("cue volume needs at least one channel");
        data.assign(channels * shape.voxels(), 0.0);
    }

    double at(std::size_t channel, std::uint64_t flat) const {
        return data[channel * shape.voxels() + flat];
    }
    double& at(std::size_t channel, std::uint64_t flat) {
        return data[channel * shape.voxels() + flat];
    }

    void validate_range() const {
        for (double x : data)
            if (!(x >= 0.0 && x <= 1.0)) throw DataError("cue value out of range [0,1]");
    }
};

enum class Connectivity {
    face,  // 2*ndim neighbors
    full,  // 3^ndim - 1 neighbors
};

namespace detail {

/// Coordinate offsets of all neighbors under a connectivity, paired with the
/// flat-index delta they induce.
struct NeighborTable {
    std::vector<std::array<int, kMaxDims>> offsets;
    std::vector<std::int64_t> deltas;
    std::size_t ndim;

    NeighborTable(const Shape& shape, Connectivity conn) : ndim(shape.ndim()) {
        auto strides = shape.strides();
        if (conn == Connectivity::face) {
            for (std::size_t a = 0; a < ndim; ++a) {
                for (int sgn : {-1, +1}) {
                    std::array<int, kMaxDims> off{};
                    off[a] = sgn;
                    offsets.push_back(off);
                    deltas.push_back(sgn * std::int64_t(strides[a]));
                }
            }
        } else {
            std::array<int, kMaxDims> off{};
            std::fill(off.begin(), off.begin() + ndim, -1);
            while (true) {
                bool zero = std::all_of(off.begin(), off.begin() + ndim, [](int x) { return x == 0; });
                if (!zero) {
                    offsets.push_back(off);
                    std::int64_t d = 0;
                    for (std::size_t a = 0; a < ndim; ++a) d += off[a] * std::int64_t(strides[a]);
                    deltas.push_back(d);
                }
                std::size_t a = ndim;
                while (a-- > 0) {
                    if (off[a] < 1) {
                        ++off[a];
                        break;
                    }
                    off[a] = -1;
                    if (a == 0) return;
                }
            }
        }
    }
};

/// Row-major odometer over all voxels; calls fn(flat, coords).
template <class F>
void for_each_voxel(const Shape& shape, F&& fn) {
    const std::size_t d = shape.ndim();
    std::array<std::uint64_t, kMaxDims> coords{};
    const std::uint64_t n = shape.voxels();
    for (std::uint64_t flat = 0; flat < n; ++flat) {
        fn(flat, std::span<const std::uint64_t>(coords.data(), d));
        for (std::size_t a = d; a-- > 0;) {
            if (++coords[a] < shape.extent(a)) break;
            coords[a] = 0;
        }
    }
}

/// Calls fn(neighbor_flat) for every in-bounds neighbor of the voxel at
/// (flat, coords) under the table.
template <class F>
void for_each_neighbor(const Shape& shape, const NeighborTable& nbr,
                       std::uint64_t flat, std::span<const std::uint64_t> coords, F&& fn) {
    for (std::size_t i = 0; i < nbr.offsets.size(); ++i) {
        bool ok = true;
        for (std::size_t a = 0; a < nbr.ndim; ++a) {
            int off = nbr.offsets[i][a];
            if (off == 0) continue;
            std::int64_t c = std::int64_t(coords[a]) + off;
            if (c < 0 || c >= std::int64_t(shape.extent(a))) {
                ok = false;
                break;
            }
        }
        if (ok) fn(std::uint64_t(std::int64_t(flat) + nbr.deltas[i]));
    }
}

/// Calls fn(a, b) for every unordered face-adjacent voxel pair, iterating
/// axis by axis in ascending flat order.
template <class F>
void for_each_face_pair(const Shape& shape, F&& fn) {
    auto strides = shape.strides();
    const std::uint64_t n = shape.voxels();
    for (std::size_t axis = 0; axis < shape.ndim(); ++axis) {
        const std::uint64_t s = strides[axis];
        const std::uint64_t e = shape.extent(axis);
        if (e < 2) continue;
        for (std::uint64_t i = 0; i < n; ++i) {
            if ((i / s) % e < e - 1) fn(i, i + s);
        }
    }
}

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(x >> (8 * i)));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(p[i]) << (8 * i);
    return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NDV array file format (bit-exact):
//   bytes 0-6   magic "NDVOL1\n"
//   byte  7     dtype code: 1 = unsigned 64-bit integer, 2 = 64-bit IEEE real
//   byte  8     ndim (u8)
//   byte  9     channel count (u8, 1 for label volumes)
//   bytes 10+   extents, 8*ndim bytes, little-endian u64
//   payload     little-endian, channel-major then C row-major
// ---------------------------------------------------------------------------

constexpr char kNdvMagic[7] = {'N', 'D', 'V', 'O', 'L', '1', '\n'};
constexpr std::uint8_t kNdvLabels = 1;
constexpr std::uint8_t kNdvCues = 2;

using AnyVolume = std::variant<LabelVolume, CueVolume>;

namespace detail {

inline std::vector<std::uint8_t> ndv_header(std::uint8_t dtype, const Shape& shape,
                                            std::uint8_t channels) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kNdvMagic, kNdvMagic + 7);
    out.push_back(dtype);
    out.push_back(std::uint8_t(shape.ndim()));
    out.push_back(channels);
    for (std::size_t a = 0; a < shape.ndim(); ++a) put_u64_le(out, shape.extent(a));
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace detail

inline void save_volume(const LabelVolume& v, const std::filesystem::path& path) {
    auto bytes = detail::ndv_header(kNdvLabels, v.shape, 1);
    bytes.reserve(bytes.size() + 8 * v.data.size());
    for (auto x : v.data) detail::put_u64_le(bytes, x);
    detail::write_file(path, bytes);
}

inline void save_volume(const CueVolume& v, const std::filesystem::path& path) {
    if (v.channels > 255) throw DataError("NDV stores at most 255 channels");
    auto bytes = detail::ndv_header(kNdvCues, v.shape, std::uint8_t(v.channels));
    bytes.reserve(bytes.size() + 8 * v.data.size());
    for (double x : v.data) detail::put_u64_le(bytes, std::bit_cast<std::uint64_t>(x));
    detail::write_file(path, bytes);
}

inline AnyVolume load_volume(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kNdvMagic, 7) != 0)
        throw DataError("malformed NDV header: " + path.string());
    const std::uint8_t dtype = bytes[7];
    const std::size_t ndim = bytes[8];
    const std::size_t channels = bytes[9];
    if (dtype != kNdvLabels && dtype != kNdvCues)
        throw DataError("unknown NDV dtype code: " + path.string());
    if (ndim < 1 || ndim > kMaxDims) throw DataError("NDV ndim out of range: " + path.string());
    if (channels < 1) throw DataError("NDV channel count must be positive: " + path.string());
    if (bytes.size() < 10 + 8 * ndim) throw DataError("truncated NDV header: " + path.string());
    std::vector<std::uint64_t> extents(ndim);
    for (std::size_t a = 0; a < ndim; ++a)
        extents[a] = detail::get_u64_le(bytes.data() + 10 + 8 * a);
    Shape shape(std::move(extents));
    const std::uint64_t count = shape.voxels() * channels;
    const std::size_t expected = 10 + 8 * ndim + 8 * count;
    if (bytes.size() != expected) throw DataError("NDV payload length mismatch: " + path.string());
    const std::uint8_t* payload = bytes.data() + 10 + 8 * ndim;
    if (dtype == kNdvLabels) {
        if (channels != 1) throw DataError("label NDV must have one channel: " + path.string());
        std::vector<std::uint64_t> data(count);
        for (std::uint64_t i = 0; i < count; ++i)
            data[i] = detail::get_u64_le(payload + 8 * i);
        return LabelVolume(std::move(shape), std::move(data));
    }
    std::vector<double> data(count);
    for (std::uint64_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<double>(detail::get_u64_le(payload + 8 * i));
    CueVolume cue(std::move(shape), channels, std::move(data));
    cue.validate_range();
    return cue;
}

inline LabelVolume load_labels(const std::filesystem::path& path) {
    auto v = load_volume(path);
    if (!std::holds_alternative<LabelVolume>(v))
        throw DataError("expected a label volume: " + path.string());
    return std::get<LabelVolume>(std::move(v));
}

inline CueVolume load_cues(const std::filesystem::path& path) {
    auto v = load_volume(path);
    if (!std::holds_alternative<CueVolume>(v))
        throw DataError("expected a cue volume: " + path.string());
    return std::get<CueVolume>(std::move(v));
}

// ---------------------------------------------------------------------------
// Regional minima and seeded watershed
// ---------------------------------------------------------------------------

/// Labels each connected plateau that sits strictly below all of its
/// neighbors with a distinct id >= 1; all other voxels get 0. Ids are
/// assigned in ascending order of the plateau's lowest flat-index voxel.
inline LabelVolume regional_minima(const CueVolume& cue, std::size_t channel, Connectivity conn) {
    if (channel >= cue.channels) throw DataError("cue channel index out of range");
    const Shape& shape = cue.shape;
    const std::uint64_t n = shape.voxels();
    const double* val = cue.data.data() + channel * n;
    detail::NeighborTable nbr(shape, conn);

    LabelVolume out(shape);
    std::vector<std::uint8_t> visited(n, 0);
    std::vector<std::uint64_t> plateau, frontier;
    std::array<std::uint64_t, kMaxDims> coords{};
    std::uint64_t next_id = 1;

    for (std::uint64_t start = 0; start < n; ++start) {
        if (visited[start]) continue;
        const double level = val[start];
        // flood the plateau of equal values
        plateau.clear();
        frontier.clear();
        frontier.push_back(start);
        visited[start] = 1;
        bool is_min = true;
        while (!frontier.empty()) {
            std::uint64_t v = frontier.back();
            frontier.pop_back();
            plateau.push_back(v);
            shape.unflatten(v, std::span<std::uint64_t>(coords.data(), shape.ndim()));
            detail::for_each_neighbor(shape, nbr, v,
                                      std::span<const std::uint64_t>(coords.data(), shape.ndim()),
                                      [&](std::uint64_t w) {
                                          if (val[w] == level) {
                                              if (!visited[w]) {
                                                  visited[w] = 1;
                                                  frontier.push_back(w);
                                              }
                                          } else if (val[w] < level) {
                                              is_min = false;
                                          }
                                      });
        }
        if (is_min) {
            for (auto v : plateau) out[v] = next_id;
            ++next_id;
        }
    }
    return out;
}

/// Priority-flood watershed: grows seed basins in ascending (cue value,
/// flat index) order until every voxel is claimed. A voxel takes the label
/// of the first popped basin voxel adjacent to it.
inline LabelVolume watershed(const CueVolume& cue, std::size_t channel, const LabelVolume& seeds,
                             Connectivity conn) {
    if (channel >= cue.channels) throw DataError("cue channel index out of range");
    if (seeds.shape != cue.shape) throw DataError("watershed: seed/cue shape mismatch");
    const Shape& shape = cue.shape;
    const std::uint64_t n = shape.voxels();
    const double* val = cue.data.data() + channel * n;
    detail::NeighborTable nbr(shape, conn);

    struct Entry {
        double value;
        std::uint64_t flat;
        bool operator>(const Entry& o) const {
            if (value != o.value) return value > o.value;
            return flat > o.flat;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap;

    LabelVolume out(shape);
    bool any_seed = false;
    for (std::uint64_t i = 0; i < n; ++i) {
        if (seeds[i] != 0) {
            out[i] = seeds[i];
            heap.push({val[i], i});
            any_seed = true;
        }
    }
    if (!any_seed) throw DataError("watershed: no seeds present");

    std::array<std::uint64_t, kMaxDims> coords{};
    while (!heap.empty()) {
        Entry e = heap.top();
        heap.pop();
        shape.unflatten(e.flat, std::span<std::uint64_t>(coords.data(), shape.ndim()));
        detail::for_each_neighbor(shape, nbr, e.flat,
                                  std::span<const std::uint64_t>(coords.data(), shape.ndim()),
                                  [&](std::uint64_t w) {
                                      if (out[w] == 0) {
                                          out[w] = out[e.flat];
                                          heap.push({val[w], w});
                                      }
                                  });
    }
    return out;
}

}  // namespace aggseg
