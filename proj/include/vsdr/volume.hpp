#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vsdr/common.hpp"

namespace vsdr {

enum class VolumeKind { intensity, mask };

// A dense scalar grid in (D,H,W) order, W fastest — the same linear layout
// the network tensors use. D is the slice axis.
template <typename T>
struct Volume {
    std::array<int64_t, 3> extents{0, 0, 0};  // D, H, W
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    VolumeKind kind = VolumeKind::intensity;
    std::vector<T> data;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
    T& at(int64_t z, int64_t y, int64_t x) {
        return data[(z * extents[1] + y) * extents[2] + x];
    }
    const T& at(int64_t z, int64_t y, int64_t x) const {
        return data[(z * extents[1] + y) * extents[2] + x];
    }

    friend bool operator==(const Volume&, const Volume&) = default;
};

template <typename T>
Volume<T> make_volume(std::array<int64_t, 3> extents, VolumeKind kind = VolumeKind::intensity,
                      T fill = T(0)) {
    for (int a = 0; a < 3; ++a)
        if (extents[a] < 1) throw ShapeError("Volume: extents must be positive");
    Volume<T> v;
    v.extents = extents;
    v.kind = kind;
    v.data.assign(static_cast<size_t>(v.numel()), fill);
    return v;
}

template <typename T>
void check_volume(const Volume<T>& v, const char* what) {
    for (int a = 0; a < 3; ++a)
        if (v.extents[a] < 1)
            throw ShapeError(std::string(what) + ": volume extents must be positive");
    if (static_cast<int64_t>(v.data.size()) != v.numel())
        throw ShapeError(std::string(what) + ": volume holds " + std::to_string(v.data.size()) +
                         " scalars but extents imply " + std::to_string(v.numel()));
}

template <typename T>
void check_mask_binary(const Volume<T>& v, const char* what) {
    for (const T x : v.data)
        if (x != T(0) && x != T(1))
            throw ValueError(std::string(what) + ": mask contains non-binary value " +
                             std::to_string(static_cast<double>(x)));
}

// Min-max rescale of an intensity volume to [0,1]; a constant volume maps
// to all zeros.
template <typename T>
Volume<T> normalize_volume(const Volume<T>& v) {
    check_volume(v, "normalize_volume");
    if (v.kind != VolumeKind::intensity)
        throw ValueError("normalize_volume: mask volumes are not normalized");
    Volume<T> out = v;
    T lo = v.data[0], hi = v.data[0];
    for (const T x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi == lo) {
        std::fill(out.data.begin(), out.data.end(), T(0));
        return out;
    }
    const T scale = T(1) / (hi - lo);
    for (auto& x : out.data) x = (x - lo) * scale;
    return out;
}

// Centered crop; when the margin is odd the extra voxel stays on the
// high-index side. Applies identically to masks and intensities.
template <typename T>
Volume<T> center_crop(const Volume<T>& v, std::array<int64_t, 3> target) {
    check_volume(v, "center_crop");
    static const char* axis_names[3] = {"depth", "height", "width"};
    std::array<int64_t, 3> off{};
    for (int a = 0; a < 3; ++a) {
        if (target[a] < 1) throw ShapeError("center_crop: target extents must be positive");
        if (target[a] > v.extents[a])
            throw ShapeError(std::string("center_crop: target ") + std::to_string(target[a]) +
                             " exceeds " + axis_names[a] + " extent " +
                             std::to_string(v.extents[a]));
        off[a] = (v.extents[a] - target[a]) / 2;
    }
    Volume<T> out = make_volume<T>(target, v.kind);
    out.spacing = v.spacing;
    for (int64_t z = 0; z < target[0]; ++z)
        for (int64_t y = 0; y < target[1]; ++y) {
            const T* src = &v.at(z + off[0], y + off[1], off[2]);
            std::copy_n(src, target[2], &out.at(z, y, 0));
        }
    return out;
}

namespace detail {

// Half-pixel source coordinate for resampling a length-`in` axis to
// length-`out`: src = (i + 0.5) * in/out - 0.5.
inline double resample_src(int64_t i, int64_t in, int64_t out) {
    return (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) -
           0.5;
}

}  // namespace detail

// Resampling to arbitrary target extents. Intensity volumes interpolate
// trilinearly (half-pixel convention, clamped borders); masks take the
// nearest source voxel (floor(src + 0.5), clamped), so labels survive
// untouched. Spacing metadata scales by the extent ratio.
template <typename T>
Volume<T> resample(const Volume<T>& v, std::array<int64_t, 3> target) {
    check_volume(v, "resample");
    for (int a = 0; a < 3; ++a)
        if (target[a] < 1) throw ShapeError("resample: target extents must be positive");
    Volume<T> out = make_volume<T>(target, v.kind);
    for (int a = 0; a < 3; ++a)
        out.spacing[a] = v.spacing[a] * static_cast<double>(v.extents[a]) /
                         static_cast<double>(target[a]);

    const int64_t D = v.extents[0], H = v.extents[1], W = v.extents[2];
    if (v.kind == VolumeKind::mask) {
        auto pick = [](int64_t i, int64_t in, int64_t out_n) {
            const int64_t j = static_cast<int64_t>(
                std::floor(detail::resample_src(i, in, out_n) + 0.5));
            return std::min(std::max<int64_t>(j, 0), in - 1);
        };
        for (int64_t z = 0; z < target[0]; ++z) {
            const int64_t sz = pick(z, D, target[0]);
            for (int64_t y = 0; y < target[1]; ++y) {
                const int64_t sy = pick(y, H, target[1]);
                for (int64_t x = 0; x < target[2]; ++x)
                    out.at(z, y, x) = v.at(sz, sy, pick(x, W, target[2]));
            }
        }
        return out;
    }

    struct Tap {
        int64_t i0, i1;
        double w1;
    };
    auto taps = [](int64_t in, int64_t out_n) {
        std::vector<Tap> t(static_cast<size_t>(out_n));
        for (int64_t i = 0; i < out_n; ++i) {
            const double src = detail::resample_src(i, in, out_n);
            if (src <= 0.0) {
                t[i] = {0, 0, 0.0};
            } else if (src >= static_cast<double>(in - 1)) {
                t[i] = {in - 1, in - 1, 0.0};
            } else {
                const int64_t lo = static_cast<int64_t>(src);
                t[i] = {lo, lo + 1, src - static_cast<double>(lo)};
            }
        }
        return t;
    };
    const auto tz = taps(D, target[0]);
    const auto ty = taps(H, target[1]);
    const auto tx = taps(W, target[2]);
    for (int64_t z = 0; z < target[0]; ++z) {
        const double wz1 = tz[z].w1, wz0 = 1.0 - wz1;
        for (int64_t y = 0; y < target[1]; ++y) {
            const double wy1 = ty[y].w1, wy0 = 1.0 - wy1;
            const T* r00 = &v.at(tz[z].i0, ty[y].i0, 0);
            const T* r01 = &v.at(tz[z].i0, ty[y].i1, 0);
            const T* r10 = &v.at(tz[z].i1, ty[y].i0, 0);
            const T* r11 = &v.at(tz[z].i1, ty[y].i1, 0);
            for (int64_t x = 0; x < target[2]; ++x) {
                const double wx1 = tx[x].w1, wx0 = 1.0 - wx1;
                const int64_t x0 = tx[x].i0, x1 = tx[x].i1;
                out.at(z, y, x) = static_cast<T>(
                    wz0 * (wy0 * (wx0 * r00[x0] + wx1 * r00[x1]) +
                           wy1 * (wx0 * r01[x0] + wx1 * r01[x1])) +
                    wz1 * (wy0 * (wx0 * r10[x0] + wx1 * r10[x1]) +
                           wy1 * (wx0 * r11[x0] + wx1 * r11[x1])));
            }
        }
    }
    return out;
}

}  // namespace vsdr
