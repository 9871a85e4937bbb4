#pragma once

#include <cmath>

#include "vsdr/tensor.hpp"

namespace vsdr {

// 2x2x2 max pooling with stride 2. Every spatial extent must be even; odd
// extents are rejected rather than silently truncated. The gradient routes
// to the argmax of each window, first index winning ties.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x) {
    if (x.rank() != 5)
        throw ShapeError("maxpool3d: input must be rank-5 [N,C,D,H,W], got " + shape_str(x.shape()));
    const Shape& s = x.shape();
    const int64_t N = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
    for (int a = 2; a < 5; ++a)
        if (s[a] % 2 != 0)
            throw ShapeError("maxpool3d: spatial extents must be even, got " + shape_str(s));
    const int64_t Do = D / 2, Ho = H / 2, Wo = W / 2;

    std::vector<T> out(static_cast<size_t>(N * C * Do * Ho * Wo));
    auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
    const T* in = x.values().data();
    int64_t oi = 0;
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* plane = in + nc * D * H * W;
        for (int64_t zo = 0; zo < Do; ++zo)
            for (int64_t yo = 0; yo < Ho; ++yo)
                for (int64_t xo = 0; xo < Wo; ++xo, ++oi) {
                    T best{};
                    int64_t best_idx = -1;
                    for (int64_t dz = 0; dz < 2; ++dz)
                        for (int64_t dy = 0; dy < 2; ++dy)
                            for (int64_t dx = 0; dx < 2; ++dx) {
                                const int64_t idx =
                                    ((zo * 2 + dz) * H + yo * 2 + dy) * W + xo * 2 + dx;
                                if (best_idx < 0 || plane[idx] > best) {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                    out[oi] = best;
                    (*argmax)[oi] = nc * D * H * W + best_idx;
                }
    }

    auto xn = x.node();
    return detail::make_op_result<T>("maxpool3d", Shape{N, C, Do, Ho, Wo}, std::move(out), {xn},
                                     [xn, argmax](detail::TensorNode<T>& self) {
                                         if (!xn->requires_grad) return;
                                         xn->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             xn->grad[(*argmax)[i]] += self.grad[i];
                                     });
}

// Batch normalization over (N,D,H,W) per channel, with learnable scale and
// shift. Training mode uses biased batch statistics and folds them into the
// running estimates as running <- (1-momentum)*running + momentum*batch;
// eval mode normalizes with the running estimates, which act as constants
// in the backward pass.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.rank() != 5)
        throw ShapeError("batchnorm3d: input must be rank-5 [N,C,D,H,W], got " +
                         shape_str(x.shape()));
    const Shape& s = x.shape();
    const int64_t N = s[0], C = s[1], spatial = s[2] * s[3] * s[4];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("batchnorm3d: gamma/beta must be [" + std::to_string(C) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (static_cast<int64_t>(running_mean.size()) != C ||
        static_cast<int64_t>(running_var.size()) != C)
        throw ShapeError("batchnorm3d: running statistics must have one entry per channel");
    const int64_t M = N * spatial;
    if (training && M == 1)
        throw NumericError(
            "batchnorm3d: batch statistics are undefined for a single value per channel "
            "(N*D*H*W == 1) in training mode");

    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C), T(0));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C), T(0));
    const T* in = x.values().data();
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = in + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) acc += p[i];
            }
            const T mu = acc / static_cast<T>(M);
            T var = 0;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = in + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    const T d = p[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(M);
            (*mean)[c] = mu;
            (*inv_std)[c] = T(1) / std::sqrt(var + eps);
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            (*mean)[c] = running_mean[c];
            (*inv_std)[c] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }

    std::vector<T> out(x.values().size());
    const auto gv = gamma.values();
    const auto bv = beta.values();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = in + (n * C + c) * spatial;
            T* q = out.data() + (n * C + c) * spatial;
            const T mu = (*mean)[c], is = (*inv_std)[c], g = gv[c], b = bv[c];
            for (int64_t i = 0; i < spatial; ++i) q[i] = g * (p[i] - mu) * is + b;
        }

    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return detail::make_op_result<T>(
        "batchnorm3d", x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, mean, inv_std, N, C, spatial, M, training](detail::TensorNode<T>& self) {
            const T* in = xn->value.data();
            for (int64_t c = 0; c < C; ++c) {
                const T mu = (*mean)[c], is = (*inv_std)[c];
                const T g = gn->value[c];
                // Channel-wise sums of the incoming gradient and its product
                // with the normalized activations.
                T sum_dy = 0, sum_dy_xhat = 0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* gp = self.grad.data() + (n * C + c) * spatial;
                    const T* p = in + (n * C + c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        sum_dy += gp[i];
                        sum_dy_xhat += gp[i] * (p[i] - mu) * is;
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[c] += sum_dy_xhat;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[c] += sum_dy;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (int64_t n = 0; n < N; ++n) {
                        const T* gp = self.grad.data() + (n * C + c) * spatial;
                        const T* p = in + (n * C + c) * spatial;
                        T* xg = xn->grad.data() + (n * C + c) * spatial;
                        if (training) {
                            // Batch statistics depend on x; the usual closed
                            // form of the chain rule through mean and var.
                            const T c1 = g * is / static_cast<T>(M);
                            for (int64_t i = 0; i < spatial; ++i) {
                                const T xhat = (p[i] - mu) * is;
                                xg[i] += c1 * (static_cast<T>(M) * gp[i] - sum_dy -
                                               xhat * sum_dy_xhat);
                            }
                        } else {
                            const T c1 = g * is;
                            for (int64_t i = 0; i < spatial; ++i) xg[i] += c1 * gp[i];
                        }
                    }
                }
            }
        });
}

namespace detail {

// Source coordinates for length-out upsampling of a length-in axis by an
// integer factor, half-pixel convention: src = (i + 0.5)/scale - 0.5,
// clamped at the borders.
template <typename T>
struct AxisTaps {
    std::vector<int64_t> i0, i1;
    std::vector<T> w1;  // weight of i1; i0 gets 1 - w1
};

template <typename T>
AxisTaps<T> upsample_taps(int64_t in, int64_t scale) {
    AxisTaps<T> t;
    const int64_t out = in * scale;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w1.resize(out);
    for (int64_t i = 0; i < out; ++i) {
        const T src = (static_cast<T>(i) + T(0.5)) / static_cast<T>(scale) - T(0.5);
        if (src <= T(0)) {
            t.i0[i] = t.i1[i] = 0;
            t.w1[i] = T(0);
        } else if (src >= static_cast<T>(in - 1)) {
            t.i0[i] = t.i1[i] = in - 1;
            t.w1[i] = T(0);
        } else {
            const int64_t lo = static_cast<int64_t>(src);
            t.i0[i] = lo;
            t.i1[i] = lo + 1;
            t.w1[i] = src - static_cast<T>(lo);
        }
    }
    return t;
}

}  // namespace detail

// Trilinear upsampling by an integer factor, half-pixel (align_corners=false)
// coordinates. Differentiable; the backward pass scatters with the same
// interpolation weights.
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, int64_t scale) {
    if (x.rank() != 5)
        throw ShapeError("upsample_trilinear: input must be rank-5 [N,C,D,H,W], got " +
                         shape_str(x.shape()));
    if (scale < 1) throw ValueError("upsample_trilinear: scale must be >= 1");
    const Shape& s = x.shape();
    const int64_t N = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
    const int64_t Do = D * scale, Ho = H * scale, Wo = W * scale;

    const auto tz = detail::upsample_taps<T>(D, scale);
    const auto ty = detail::upsample_taps<T>(H, scale);
    const auto tx = detail::upsample_taps<T>(W, scale);

    std::vector<T> out(static_cast<size_t>(N * C * Do * Ho * Wo));
    const T* in = x.values().data();
    int64_t oi = 0;
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* plane = in + nc * D * H * W;
        for (int64_t z = 0; z < Do; ++z) {
            const T wz1 = tz.w1[z], wz0 = T(1) - wz1;
            const int64_t z0 = tz.i0[z] * H, z1 = tz.i1[z] * H;
            for (int64_t y = 0; y < Ho; ++y) {
                const T wy1 = ty.w1[y], wy0 = T(1) - wy1;
                const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
                const T* r00 = plane + (z0 + y0) * W;
                const T* r01 = plane + (z0 + y1) * W;
                const T* r10 = plane + (z1 + y0) * W;
                const T* r11 = plane + (z1 + y1) * W;
                for (int64_t xo = 0; xo < Wo; ++xo, ++oi) {
                    const T wx1 = tx.w1[xo], wx0 = T(1) - wx1;
                    const int64_t x0 = tx.i0[xo], x1 = tx.i1[xo];
                    out[oi] = wz0 * (wy0 * (wx0 * r00[x0] + wx1 * r00[x1]) +
                                     wy1 * (wx0 * r01[x0] + wx1 * r01[x1])) +
                              wz1 * (wy0 * (wx0 * r10[x0] + wx1 * r10[x1]) +
                                     wy1 * (wx0 * r11[x0] + wx1 * r11[x1]));
                }
            }
        }
    }

    auto xn = x.node();
    return detail::make_op_result<T>(
        "upsample_trilinear", Shape{N, C, Do, Ho, Wo}, std::move(out), {xn},
        [xn, scale, N, C, D, H, W, Do, Ho, Wo](detail::TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const auto tz = detail::upsample_taps<T>(D, scale);
            const auto ty = detail::upsample_taps<T>(H, scale);
            const auto tx = detail::upsample_taps<T>(W, scale);
            int64_t oi = 0;
            for (int64_t nc = 0; nc < N * C; ++nc) {
                T* plane = xn->grad.data() + nc * D * H * W;
                for (int64_t z = 0; z < Do; ++z) {
                    const T wz1 = tz.w1[z], wz0 = T(1) - wz1;
                    const int64_t z0 = tz.i0[z] * H, z1 = tz.i1[z] * H;
                    for (int64_t y = 0; y < Ho; ++y) {
                        const T wy1 = ty.w1[y], wy0 = T(1) - wy1;
                        const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
                        T* r00 = plane + (z0 + y0) * W;
                        T* r01 = plane + (z0 + y1) * W;
                        T* r10 = plane + (z1 + y0) * W;
                        T* r11 = plane + (z1 + y1) * W;
                        for (int64_t xo = 0; xo < Wo; ++xo, ++oi) {
                            const T g = self.grad[oi];
                            const T wx1 = tx.w1[xo], wx0 = T(1) - wx1;
                            const int64_t x0 = tx.i0[xo], x1 = tx.i1[xo];
                            r00[x0] += g * wz0 * wy0 * wx0;
                            r00[x1] += g * wz0 * wy0 * wx1;
                            r01[x0] += g * wz0 * wy1 * wx0;
                            r01[x1] += g * wz0 * wy1 * wx1;
                            r10[x0] += g * wz1 * wy0 * wx0;
                            r10[x1] += g * wz1 * wy0 * wx1;
                            r11[x0] += g * wz1 * wy1 * wx0;
                            r11[x1] += g * wz1 * wy1 * wx1;
                        }
                    }
                }
            }
        });
}

}  // namespace vsdr
