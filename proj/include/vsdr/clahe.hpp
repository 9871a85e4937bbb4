#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vsdr/common.hpp"
#include "vsdr/volume.hpp"

namespace vsdr {

// Contrast-limited adaptive histogram equalization over 2D slices.
//
// Conventions (fixed; the tests hold an independent reference to them):
//  - slice intensities are binned on the slice's own [min,max] range:
//    bin = clamp(floor((v-min)/(max-min)*bins), 0, bins-1);
//  - tile t along an axis of extent E covers [t*E/tiles, (t+1)*E/tiles);
//  - each tile histogram is clipped at max(1, trunc(clip_limit*area/bins));
//    the clipped mass is redistributed in a single uniform pass (excess/bins
//    to every bin, the remainder one count per bin starting from bin 0);
//  - the tile mapping is the inclusive CDF divided by the tile area, so
//    outputs lie in (0,1];
//  - pixels interpolate bilinearly between the mappings of the four nearest
//    tile centers (center = (lo+hi-1)/2); coordinates outside the center
//    lattice clamp to the edge tiles;
//  - a constant slice passes through unchanged.
struct ClaheParams {
    int64_t tiles_y = 8;
    int64_t tiles_x = 8;
    double clip_limit = 2.0;
    int64_t bins = 256;

    void validate() const {
        if (tiles_y < 1 || tiles_x < 1) throw ValueError("clahe: tile counts must be >= 1");
        if (clip_limit < 1.0) throw ValueError("clahe: clip_limit must be >= 1.0");
        if (bins < 2) throw ValueError("clahe: bins must be >= 2");
    }
};

struct ClaheTile {
    int64_t y_lo, y_hi, x_lo, x_hi;
    int64_t area;
    int64_t limit;             // clip threshold actually applied
    int64_t excess;            // mass removed by clipping, then redistributed
    double center_y, center_x;
    std::vector<int64_t> hist;    // post clip + redistribution; sums to area
    std::vector<double> mapping;  // CDF / area per bin
};

template <typename T>
struct ClaheTables {
    int64_t tiles_y, tiles_x, bins;
    T lo, hi;
    std::vector<ClaheTile> tiles;  // row-major [tiles_y][tiles_x]

    const ClaheTile& tile(int64_t ty, int64_t tx) const {
        return tiles[static_cast<size_t>(ty * tiles_x + tx)];
    }
};

namespace detail {

template <typename T>
int64_t clahe_bin(T v, T lo, T hi, int64_t bins) {
    const double f = (static_cast<double>(v) - static_cast<double>(lo)) /
                     (static_cast<double>(hi) - static_cast<double>(lo));
    int64_t b = static_cast<int64_t>(std::floor(f * static_cast<double>(bins)));
    return std::clamp<int64_t>(b, 0, bins - 1);
}

struct ClaheTap {
    int64_t t0, t1;
    double w1;
};

// Per-coordinate interpolation taps over the tile-center lattice.
inline std::vector<ClaheTap> clahe_taps(int64_t extent, const std::vector<double>& centers) {
    const int64_t n = static_cast<int64_t>(centers.size());
    std::vector<ClaheTap> taps(static_cast<size_t>(extent));
    int64_t t = 0;
    for (int64_t i = 0; i < extent; ++i) {
        const double c = static_cast<double>(i);
        if (c <= centers.front()) {
            taps[i] = {0, 0, 0.0};
        } else if (c >= centers.back()) {
            taps[i] = {n - 1, n - 1, 0.0};
        } else {
            while (c >= centers[static_cast<size_t>(t + 1)]) ++t;
            taps[i] = {t, t + 1,
                       (c - centers[static_cast<size_t>(t)]) /
                           (centers[static_cast<size_t>(t + 1)] - centers[static_cast<size_t>(t)])};
        }
    }
    return taps;
}

}  // namespace detail

// Builds the clipped, redistributed histograms and equalization mappings for
// every tile of one slice. Requires hi > lo (non-constant slice).
template <typename T>
ClaheTables<T> clahe_tables(const T* in, int64_t H, int64_t W, const ClaheParams& p, T lo, T hi) {
    ClaheTables<T> tab;
    tab.tiles_y = p.tiles_y;
    tab.tiles_x = p.tiles_x;
    tab.bins = p.bins;
    tab.lo = lo;
    tab.hi = hi;
    tab.tiles.reserve(static_cast<size_t>(p.tiles_y * p.tiles_x));
    for (int64_t ty = 0; ty < p.tiles_y; ++ty)
        for (int64_t tx = 0; tx < p.tiles_x; ++tx) {
            ClaheTile tile;
            tile.y_lo = ty * H / p.tiles_y;
            tile.y_hi = (ty + 1) * H / p.tiles_y;
            tile.x_lo = tx * W / p.tiles_x;
            tile.x_hi = (tx + 1) * W / p.tiles_x;
            tile.area = (tile.y_hi - tile.y_lo) * (tile.x_hi - tile.x_lo);
            tile.center_y = (static_cast<double>(tile.y_lo + tile.y_hi) - 1.0) / 2.0;
            tile.center_x = (static_cast<double>(tile.x_lo + tile.x_hi) - 1.0) / 2.0;

            tile.hist.assign(static_cast<size_t>(p.bins), 0);
            for (int64_t y = tile.y_lo; y < tile.y_hi; ++y)
                for (int64_t x = tile.x_lo; x < tile.x_hi; ++x)
                    ++tile.hist[static_cast<size_t>(
                        detail::clahe_bin(in[y * W + x], lo, hi, p.bins))];

            tile.limit = std::max<int64_t>(
                1, static_cast<int64_t>(p.clip_limit * static_cast<double>(tile.area) /
                                        static_cast<double>(p.bins)));
            tile.excess = 0;
            for (auto& h : tile.hist)
                if (h > tile.limit) {
                    tile.excess += h - tile.limit;
                    h = tile.limit;
                }
            const int64_t share = tile.excess / p.bins;
            const int64_t rem = tile.excess % p.bins;
            for (int64_t b = 0; b < p.bins; ++b)
                tile.hist[static_cast<size_t>(b)] += share + (b < rem ? 1 : 0);

            tile.mapping.resize(static_cast<size_t>(p.bins));
            int64_t running = 0;
            for (int64_t b = 0; b < p.bins; ++b) {
                running += tile.hist[static_cast<size_t>(b)];
                tile.mapping[static_cast<size_t>(b)] =
                    static_cast<double>(running) / static_cast<double>(tile.area);
            }
            tab.tiles.push_back(std::move(tile));
        }
    return tab;
}

template <typename T>
void clahe_slice(const T* in, T* out, int64_t H, int64_t W, const ClaheParams& p) {
    p.validate();
    if (H < p.tiles_y || W < p.tiles_x)
        throw ShapeError("clahe: slice extents " + std::to_string(H) + "x" + std::to_string(W) +
                         " smaller than tile grid " + std::to_string(p.tiles_y) + "x" +
                         std::to_string(p.tiles_x));
    T lo = in[0], hi = in[0];
    for (int64_t i = 0; i < H * W; ++i) {
        lo = std::min(lo, in[i]);
        hi = std::max(hi, in[i]);
    }
    if (hi == lo) {
        std::copy_n(in, H * W, out);
        return;
    }

    const auto tab = clahe_tables(in, H, W, p, lo, hi);
    std::vector<double> centers_y, centers_x;
    for (int64_t ty = 0; ty < p.tiles_y; ++ty) centers_y.push_back(tab.tile(ty, 0).center_y);
    for (int64_t tx = 0; tx < p.tiles_x; ++tx) centers_x.push_back(tab.tile(0, tx).center_x);
    const auto taps_y = detail::clahe_taps(H, centers_y);
    const auto taps_x = detail::clahe_taps(W, centers_x);

    for (int64_t y = 0; y < H; ++y) {
        const auto& ry = taps_y[static_cast<size_t>(y)];
        const double wy1 = ry.w1, wy0 = 1.0 - wy1;
        for (int64_t x = 0; x < W; ++x) {
            const auto& rx = taps_x[static_cast<size_t>(x)];
            const double wx1 = rx.w1, wx0 = 1.0 - wx1;
            const size_t b =
                static_cast<size_t>(detail::clahe_bin(in[y * W + x], lo, hi, p.bins));
            const double m00 = tab.tile(ry.t0, rx.t0).mapping[b];
            const double m01 = tab.tile(ry.t0, rx.t1).mapping[b];
            const double m10 = tab.tile(ry.t1, rx.t0).mapping[b];
            const double m11 = tab.tile(ry.t1, rx.t1).mapping[b];
            out[y * W + x] =
                static_cast<T>(wy0 * (wx0 * m00 + wx1 * m01) + wy1 * (wx0 * m10 + wx1 * m11));
        }
    }
}

// Slice-wise application over the depth axis of an intensity volume.
template <typename T>
Volume<T> clahe_volume(const Volume<T>& v, const ClaheParams& p) {
    check_volume(v, "clahe");
    if (v.kind != VolumeKind::intensity)
        throw ValueError("clahe: only intensity volumes are equalized");
    Volume<T> out = v;
    const int64_t slice = v.extents[1] * v.extents[2];
    for (int64_t z = 0; z < v.extents[0]; ++z)
        clahe_slice(v.data.data() + z * slice, out.data.data() + z * slice, v.extents[1],
                    v.extents[2], p);
    return out;
}

}  // namespace vsdr
