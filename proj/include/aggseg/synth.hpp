#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "aggseg/util.hpp"
#include "aggseg/volume.hpp"

namespace aggseg {

/// Configuration of the synthetic benchmark generator. All randomness flows
/// from the master seed through four fixed substreams (voronoi seeds,
/// boundary noise, texture bases, texture noise), so a config reproduces the
/// same volumes everywhere.
struct SynthConfig {
    std::vector<std::uint64_t> shape{128, 128};
    std::uint64_t regions = 20;
    std::uint64_t blur_radius = 1;
    double boundary_noise = 0.2;
    bool texture = true;
    double texture_noise = 0.2;
    std::uint64_t seed = 42;
};

struct SynthData {
    LabelVolume gt;
    CueVolume cues;
    LabelVolume sp;
};

namespace detail {

/// Clipped box blur along one axis: each value becomes the mean of the
/// in-bounds window of radius r on its line.
inline void box_blur_axis(const Shape& shape, std::vector<double>& data, std::size_t axis,
                          std::uint64_t radius) {
    if (radius == 0) return;
    const auto strides = shape.strides();
    const std::uint64_t s = strides[axis];
    const std::uint64_t e = shape.extent(axis);
    const std::uint64_t n = shape.voxels();
    std::vector<double> prefix(e + 1), line(e);
    for (std::uint64_t base = 0; base < n; ++base) {
        if ((base / s) % e != 0) continue;  // not a line start
        for (std::uint64_t t = 0; t < e; ++t) line[t] = data[base + t * s];
        prefix[0] = 0;
        for (std::uint64_t t = 0; t < e; ++t) prefix[t + 1] = prefix[t] + line[t];
        for (std::uint64_t t = 0; t < e; ++t) {
            const std::uint64_t lo = t >= radius ? t - radius : 0;
            const std::uint64_t hi = std::min(t + radius, e - 1);
            data[base + t * s] = (prefix[hi + 1] - prefix[lo]) / double(hi - lo + 1);
        }
    }
}

}  // namespace detail

/// Generate a (gold standard, cue stack, superpixels) triple: a Voronoi
/// partition, a blurred and noised boundary map (channel 0, plus an optional
/// per-region texture channel), and watershed superpixels grown from the
/// regional minima of channel 0.
inline SynthData generate(const SynthConfig& cfg) {
    Shape shape(cfg.shape);
    const std::uint64_t n = shape.voxels();
    const std::size_t d = shape.ndim();
    if (cfg.regions < 2) throw DataError("synth: need at least 2 regions");
    if (cfg.regions > n) throw DataError("synth: more regions than voxels");
    if (cfg.boundary_noise < 0 || cfg.boundary_noise > 1 || cfg.texture_noise < 0 ||
        cfg.texture_noise > 1)
        throw DataError("synth: noise amplitudes must be within [0,1]");

    SplitMix64 voronoi_rng(stream_seed(cfg.seed, 0));
    SplitMix64 bnoise_rng(stream_seed(cfg.seed, 1));
    SplitMix64 texture_rng(stream_seed(cfg.seed, 2));
    SplitMix64 tnoise_rng(stream_seed(cfg.seed, 3));

    // gold standard: Voronoi cells of k uniform points, ties to the smaller id
    std::vector<std::array<std::int64_t, kMaxDims>> sites(cfg.regions);
    for (auto& p : sites)
        for (std::size_t a = 0; a < d; ++a) p[a] = std::int64_t(voronoi_rng.below(shape.extent(a)));

    SynthData out;
    out.gt = LabelVolume(shape);
    detail::for_each_voxel(shape, [&](std::uint64_t flat, std::span<const std::uint64_t> coords) {
        std::int64_t best = 0;
        std::uint64_t best_id = 0;
        for (std::uint64_t j = 0; j < cfg.regions; ++j) {
            std::int64_t dist = 0;
            for (std::size_t a = 0; a < d; ++a) {
                const std::int64_t diff = std::int64_t(coords[a]) - sites[j][a];
                dist += diff * diff;
            }
            if (j == 0 || dist < best) {
                best = dist;
                best_id = j + 1;
            }
        }
        out.gt[flat] = best_id;
    });

    // channel 0: blurred boundary indicator plus clipped uniform noise
    out.cues = CueVolume(shape, cfg.texture ? 2 : 1);
    detail::NeighborTable face(shape, Connectivity::face);
    detail::for_each_voxel(shape, [&](std::uint64_t flat, std::span<const std::uint64_t> coords) {
        bool boundary = false;
        detail::for_each_neighbor(shape, face, flat, coords, [&](std::uint64_t w) {
            if (out.gt[w] != out.gt[flat]) boundary = true;
        });
        out.cues.at(0, flat) = boundary ? 1.0 : 0.0;
    });
    {
        std::vector<double> channel(out.cues.data.begin(),
                                    out.cues.data.begin() + std::ptrdiff_t(n));
        for (std::size_t a = 0; a < d; ++a)
            detail::box_blur_axis(shape, channel, a, cfg.blur_radius);
        std::copy(channel.begin(), channel.end(), out.cues.data.begin());
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        const double noise = (2.0 * bnoise_rng.unit() - 1.0) * cfg.boundary_noise;
        out.cues.at(0, i) = std::clamp(out.cues.at(0, i) + noise, 0.0, 1.0);
    }

    // channel 1: one base level per gold region plus voxel noise
    if (cfg.texture) {
        std::vector<double> base(cfg.regions);
        for (auto& b : base) b = texture_rng.unit();
        for (std::uint64_t i = 0; i < n; ++i) {
            const double noise = (2.0 * tnoise_rng.unit() - 1.0) * cfg.texture_noise;
            out.cues.at(1, i) = std::clamp(base[out.gt[i] - 1] + noise, 0.0, 1.0);
        }
    }

    // superpixels: watershed of channel 0 from its regional minima
    auto seeds = regional_minima(out.cues, 0, Connectivity::face);
    out.sp = watershed(out.cues, 0, seeds, Connectivity::face);
    return out;
}

}  // namespace aggseg
