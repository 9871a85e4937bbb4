#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "vsdr/common.hpp"
#include "vsdr/rng.hpp"
#include "vsdr/volume.hpp"

namespace vsdr {

// Synthetic cases for desk-scale experiments: a randomly oriented ellipsoid
// body with a few attached tubular branches, rendered as foreground over a
// darker background with a smooth multiplicative shading field and additive
// Gaussian noise. Geometry lengths are fractions of the smallest extent.
struct PhantomParams {
    double radius_lo = 0.16, radius_hi = 0.26;        // ellipsoid semi-axes
    int64_t veins_min = 2, veins_max = 4;             // attached branches
    double vein_radius_lo = 0.04, vein_radius_hi = 0.07;
    double vein_length_lo = 0.35, vein_length_hi = 0.55;
    double noise_sigma = 0.05;
    double bias_amplitude = 0.3;
    double base_level = 0.2;
    double contrast = 0.6;
    double fg_lo = 0.01, fg_hi = 0.10;  // accepted foreground fraction
    int64_t max_attempts = 64;

    void validate() const {
        if (!(radius_lo > 0.0) || radius_hi < radius_lo)
            throw ValueError("phantom: radius range must satisfy 0 < lo <= hi");
        if (veins_min < 0 || veins_max < veins_min)
            throw ValueError("phantom: vein count range must satisfy 0 <= min <= max");
        if (!(vein_radius_lo > 0.0) || vein_radius_hi < vein_radius_lo)
            throw ValueError("phantom: vein radius range must satisfy 0 < lo <= hi");
        if (!(vein_length_lo > 0.0) || vein_length_hi < vein_length_lo)
            throw ValueError("phantom: vein length range must satisfy 0 < lo <= hi");
        if (noise_sigma < 0.0) throw ValueError("phantom: noise sigma must be >= 0");
        if (bias_amplitude < 0.0 || bias_amplitude > 0.9)
            throw ValueError("phantom: bias amplitude must be in [0, 0.9]");
        if (!(fg_lo > 0.0) || !(fg_hi > fg_lo) || fg_hi > 1.0)
            throw ValueError("phantom: foreground bounds must satisfy 0 < lo < hi <= 1");
        if (max_attempts < 1) throw ValueError("phantom: max_attempts must be >= 1");
    }
};

template <typename T>
struct PhantomCase {
    Volume<T> image;
    Volume<T> mask;
};

namespace detail {

struct Capsule {
    std::array<double, 3> a, b;
    double radius;
};

inline double capsule_distance_sq(const Capsule& c, double z, double y, double x) {
    const double dz = c.b[0] - c.a[0], dy = c.b[1] - c.a[1], dx = c.b[2] - c.a[2];
    const double pz = z - c.a[0], py = y - c.a[1], px = x - c.a[2];
    const double len_sq = dz * dz + dy * dy + dx * dx;
    double t = len_sq > 0.0 ? (pz * dz + py * dy + px * dx) / len_sq : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double rz = pz - t * dz, ry = py - t * dy, rx = px - t * dx;
    return rz * rz + ry * ry + rx * rx;
}

// Rotation matrix from a random unit quaternion.
inline std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
    double q[4];
    double norm = 0.0;
    for (auto& c : q) {
        c = rng.normal();
        norm += c * c;
    }
    norm = std::sqrt(norm);
    for (auto& c : q) c /= norm;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

}  // namespace detail

template <typename T>
PhantomCase<T> generate_phantom(uint64_t seed, std::array<int64_t, 3> extents,
                                const PhantomParams& p = {}) {
    p.validate();
    for (int a = 0; a < 3; ++a)
        if (extents[a] < 16)
            throw ShapeError("phantom: extents must be >= 16 per axis, got " +
                             std::to_string(extents[a]));

    Rng rng(derive_seed(seed, 0x9A27));
    const double D = double(extents[0]), H = double(extents[1]), W = double(extents[2]);
    const double min_ext = std::min({D, H, W});
    const int64_t total = extents[0] * extents[1] * extents[2];

    Volume<T> mask = make_volume<T>(extents, VolumeKind::mask);
    int64_t fg = 0;
    bool accepted = false;
    double fraction = 0.0;
    for (int64_t attempt = 0; attempt < p.max_attempts && !accepted; ++attempt) {
        const std::array<double, 3> c{D * (0.5 + rng.uniform(-0.08, 0.08)),
                                      H * (0.5 + rng.uniform(-0.08, 0.08)),
                                      W * (0.5 + rng.uniform(-0.08, 0.08))};
        std::array<double, 3> semi;
        for (auto& s : semi) s = min_ext * rng.uniform(p.radius_lo, p.radius_hi);
        const auto rot = detail::random_rotation(rng);

        const int64_t n_veins =
            p.veins_min + static_cast<int64_t>(rng.uniform_int(
                              static_cast<uint64_t>(p.veins_max - p.veins_min + 1)));
        std::vector<detail::Capsule> veins;
        for (int64_t i = 0; i < n_veins; ++i) {
            std::array<double, 3> dir;
            double norm = 0.0;
            for (auto& d : dir) {
                d = rng.normal();
                norm += d * d;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            const double len = min_ext * rng.uniform(p.vein_length_lo, p.vein_length_hi);
            detail::Capsule v;
            v.a = c;
            for (int a = 0; a < 3; ++a) v.b[a] = c[a] + dir[a] / norm * len;
            v.radius = min_ext * rng.uniform(p.vein_radius_lo, p.vein_radius_hi);
            veins.push_back(v);
        }

        fg = 0;
        for (int64_t z = 0; z < extents[0]; ++z)
            for (int64_t y = 0; y < extents[1]; ++y)
                for (int64_t x = 0; x < extents[2]; ++x) {
                    const double uz = double(z) - c[0], uy = double(y) - c[1],
                                 ux = double(x) - c[2];
                    const double vz = rot[0][0] * uz + rot[0][1] * uy + rot[0][2] * ux;
                    const double vy = rot[1][0] * uz + rot[1][1] * uy + rot[1][2] * ux;
                    const double vx = rot[2][0] * uz + rot[2][1] * uy + rot[2][2] * ux;
                    bool in = (vz / semi[0]) * (vz / semi[0]) + (vy / semi[1]) * (vy / semi[1]) +
                                  (vx / semi[2]) * (vx / semi[2]) <=
                              1.0;
                    for (size_t i = 0; !in && i < veins.size(); ++i)
                        in = detail::capsule_distance_sq(veins[i], double(z), double(y),
                                                         double(x)) <=
                             veins[i].radius * veins[i].radius;
                    mask.at(z, y, x) = in ? T(1) : T(0);
                    fg += in;
                }
        fraction = double(fg) / double(total);
        accepted = fraction >= p.fg_lo && fraction <= p.fg_hi;
    }
    if (fg == 0) throw ValueError("phantom: parameters yield an empty mask");
    if (!accepted) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "phantom: foreground fraction %.4f outside [%.4f, %.4f] after %lld attempts",
                      fraction, p.fg_lo, p.fg_hi, static_cast<long long>(p.max_attempts));
        throw ValueError(msg);
    }

    // Smooth multiplicative shading: one low-frequency cosine with a random
    // direction and phase.
    const double fz = rng.uniform(0.4, 1.2), fy = rng.uniform(0.4, 1.2),
                 fx = rng.uniform(0.4, 1.2);
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

    Volume<T> image = make_volume<T>(extents, VolumeKind::intensity);
    for (int64_t z = 0; z < extents[0]; ++z)
        for (int64_t y = 0; y < extents[1]; ++y)
            for (int64_t x = 0; x < extents[2]; ++x) {
                const double level =
                    p.base_level + p.contrast * static_cast<double>(mask.at(z, y, x));
                double v = level;
                if (p.bias_amplitude > 0.0) {
                    const double arg = 2.0 * 3.14159265358979323846 *
                                           (fz * double(z) / D + fy * double(y) / H +
                                            fx * double(x) / W) +
                                       phase;
                    v *= 1.0 + p.bias_amplitude * std::cos(arg);
                }
                if (p.noise_sigma > 0.0) v += p.noise_sigma * rng.normal();
                image.at(z, y, x) = static_cast<T>(v);
            }
    return {std::move(image), std::move(mask)};
}

}  // namespace vsdr
