#pragma once

#include <Eigen/Core>
#include <array>
#include <cstring>

#include "vsdr/tensor.hpp"

namespace vsdr {

// Geometry of a 3D convolution. Axis order is (depth, height, width).
// A kernel tap i at dilation d reads offset i*d, so the effective kernel
// extent per axis is k + (k-1)(d-1).
struct Conv3dSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    std::array<int64_t, 3> kernel{3, 3, 3};
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> padding{0, 0, 0};
    std::array<int64_t, 3> dilation{1, 1, 1};

    int64_t effective_extent(int axis) const {
        return kernel[axis] + (kernel[axis] - 1) * (dilation[axis] - 1);
    }
    int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }

    // Shape-preserving padding for stride 1: p = d*(k-1)/2 per axis.
    static Conv3dSpec same_padded(int64_t in_ch, int64_t out_ch, int64_t k, int64_t d) {
        Conv3dSpec s;
        s.in_channels = in_ch;
        s.out_channels = out_ch;
        s.kernel = {k, k, k};
        s.dilation = {d, d, d};
        const int64_t p = d * (k - 1) / 2;
        s.padding = {p, p, p};
        return s;
    }
};

inline std::array<int64_t, 3> conv3d_output_shape(const std::array<int64_t, 3>& in_extents,
                                                  const Conv3dSpec& spec) {
    static const char* axis_names[3] = {"depth", "height", "width"};
    std::array<int64_t, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const int64_t eff = spec.effective_extent(a);
        const int64_t span = in_extents[a] + 2 * spec.padding[a] - eff;
        out[a] = span < 0 ? 0 : span / spec.stride[a] + 1;
        if (out[a] < 1)
            throw ShapeError(std::string("conv3d: non-positive output extent on ") + axis_names[a] +
                             " axis (input " + std::to_string(in_extents[a]) + ", effective kernel " +
                             std::to_string(eff) + ", padding " + std::to_string(spec.padding[a]) + ")");
    }
    return out;
}

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gathers the (in_ch * k^3) x (H'*W') patch matrix for one output z-slab.
// Out-of-range taps read zero. Stride-1 rows are filled with bulk copies.
template <typename T>
void im2col_slab(const T* in, int64_t D, int64_t H, int64_t W, const Conv3dSpec& spec,
                 const std::array<int64_t, 3>& out_ext, int64_t zo, T* col) {
    const int64_t Ho = out_ext[1], Wo = out_ext[2];
    const int64_t cols = Ho * Wo;
    T* row = col;
    for (int64_t c = 0; c < spec.in_channels; ++c) {
        const T* chan = in + c * D * H * W;
        for (int64_t kz = 0; kz < spec.kernel[0]; ++kz) {
            const int64_t z = zo * spec.stride[0] - spec.padding[0] + kz * spec.dilation[0];
            for (int64_t ky = 0; ky < spec.kernel[1]; ++ky) {
                for (int64_t kx = 0; kx < spec.kernel[2]; ++kx, row += cols) {
                    if (z < 0 || z >= D) {
                        std::fill_n(row, cols, T(0));
                        continue;
                    }
                    const int64_t xoff = kx * spec.dilation[2] - spec.padding[2];
                    for (int64_t yo = 0; yo < Ho; ++yo) {
                        const int64_t y = yo * spec.stride[1] - spec.padding[1] + ky * spec.dilation[1];
                        T* dst = row + yo * Wo;
                        if (y < 0 || y >= H) {
                            std::fill_n(dst, Wo, T(0));
                            continue;
                        }
                        const T* src = chan + (z * H + y) * W;
                        if (spec.stride[2] == 1) {
                            // valid xo range: 0 <= xo + xoff < W
                            const int64_t lo = std::max<int64_t>(0, -xoff);
                            const int64_t hi = std::min<int64_t>(Wo, W - xoff);
                            if (lo > 0) std::fill_n(dst, std::min(lo, Wo), T(0));
                            if (hi > lo) std::memcpy(dst + lo, src + lo + xoff, (hi - lo) * sizeof(T));
                            if (hi < Wo) std::fill_n(dst + std::max(hi, int64_t(0)), Wo - std::max(hi, int64_t(0)), T(0));
                        } else {
                            for (int64_t xo = 0; xo < Wo; ++xo) {
                                const int64_t x = xo * spec.stride[2] + xoff;
                                dst[xo] = (x < 0 || x >= W) ? T(0) : src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back onto the input gradient.
template <typename T>
void col2im_slab(const T* col, int64_t D, int64_t H, int64_t W, const Conv3dSpec& spec,
                 const std::array<int64_t, 3>& out_ext, int64_t zo, T* grad_in) {
    const int64_t Ho = out_ext[1], Wo = out_ext[2];
    const int64_t cols = Ho * Wo;
    const T* row = col;
    for (int64_t c = 0; c < spec.in_channels; ++c) {
        T* chan = grad_in + c * D * H * W;
        for (int64_t kz = 0; kz < spec.kernel[0]; ++kz) {
            const int64_t z = zo * spec.stride[0] - spec.padding[0] + kz * spec.dilation[0];
            for (int64_t ky = 0; ky < spec.kernel[1]; ++ky) {
                for (int64_t kx = 0; kx < spec.kernel[2]; ++kx, row += cols) {
                    if (z < 0 || z >= D) continue;
                    const int64_t xoff = kx * spec.dilation[2] - spec.padding[2];
                    for (int64_t yo = 0; yo < Ho; ++yo) {
                        const int64_t y = yo * spec.stride[1] - spec.padding[1] + ky * spec.dilation[1];
                        if (y < 0 || y >= H) continue;
                        T* dst = chan + (z * H + y) * W;
                        const T* src = row + yo * Wo;
                        for (int64_t xo = 0; xo < Wo; ++xo) {
                            const int64_t x = xo * spec.stride[2] + xoff;
                            if (x >= 0 && x < W) dst[x] += src[xo];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 3D convolution with zero padding, stride and dilation, differentiable
// w.r.t. input, weight and bias. Input [N,C,D,H,W], weight
// [out_ch,in_ch,kz,ky,kx], bias [out_ch]. Implemented as per-slab im2col
// plus a GEMM; the serial reference this is tested against lives with the
// tests and never shares this path.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dSpec& spec) {
    if (input.rank() != 5)
        throw ShapeError("conv3d: input must be rank-5 [N,C,D,H,W], got " + shape_str(input.shape()));
    const Shape& is = input.shape();
    if (is[1] != spec.in_channels)
        throw ShapeError("conv3d: input has " + std::to_string(is[1]) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    const Shape expect_w{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1],
                         spec.kernel[2]};
    if (weight.shape() != expect_w)
        throw ShapeError("conv3d: weight shape " + shape_str(weight.shape()) + " does not match spec " +
                         shape_str(expect_w));
    if (bias.shape() != Shape{spec.out_channels})
        throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) + ", expected [" +
                         std::to_string(spec.out_channels) + "]");

    const int64_t N = is[0], D = is[2], H = is[3], W = is[4];
    const auto out_ext = conv3d_output_shape({D, H, W}, spec);
    const int64_t Do = out_ext[0], Ho = out_ext[1], Wo = out_ext[2];
    const int64_t OC = spec.out_channels;
    const int64_t K = spec.in_channels * spec.kernel_volume();
    const int64_t cols = Ho * Wo;

    std::vector<T> out(static_cast<size_t>(N * OC * Do * cols));
    std::vector<T> colbuf(static_cast<size_t>(K * cols));

    using Mat = detail::MatRM<T>;
    Eigen::Map<const Mat> Wm(weight.values().data(), OC, K);
    const T* in_ptr = input.values().data();
    const auto bv = bias.values();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t zo = 0; zo < Do; ++zo) {
            detail::im2col_slab(in_ptr + n * spec.in_channels * D * H * W, D, H, W, spec, out_ext, zo,
                                colbuf.data());
            Eigen::Map<const Mat> colM(colbuf.data(), K, cols);
            Eigen::Map<Mat, Eigen::Unaligned, Eigen::OuterStride<>> outM(
                out.data() + (n * OC * Do + zo) * cols, OC, cols, Eigen::OuterStride<>(Do * cols));
            outM.noalias() = Wm * colM;
            for (int64_t o = 0; o < OC; ++o) outM.row(o).array() += bv[o];
        }
    }

    auto xn = input.node(), wn = weight.node(), bn = bias.node();
    Shape out_shape{N, OC, Do, Ho, Wo};
    return detail::make_op_result<T>(
        "conv3d", std::move(out_shape), std::move(out), {xn, wn, bn},
        [xn, wn, bn, spec, out_ext, N, D, H, W, OC, K, cols, Do](detail::TensorNode<T>& self) {
            using Mat = detail::MatRM<T>;
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t o = 0; o < OC; ++o) {
                        const T* g = self.grad.data() + (n * OC + o) * Do * cols;
                        T acc = 0;
                        for (int64_t i = 0; i < Do * cols; ++i) acc += g[i];
                        bn->grad[o] += acc;
                    }
            }
            const bool need_w = wn->requires_grad;
            const bool need_x = xn->requires_grad;
            if (!need_w && !need_x) return;
            if (need_w) wn->ensure_grad();
            if (need_x) xn->ensure_grad();
            std::vector<T> colbuf(static_cast<size_t>(K * cols));
            Eigen::Map<const Mat> Wm(wn->value.data(), OC, K);
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t zo = 0; zo < Do; ++zo) {
                    Eigen::Map<const Mat, Eigen::Unaligned, Eigen::OuterStride<>> gM(
                        self.grad.data() + (n * OC * Do + zo) * cols, OC, cols,
                        Eigen::OuterStride<>(Do * cols));
                    if (need_w) {
                        detail::im2col_slab(xn->value.data() + n * spec.in_channels * D * H * W, D, H,
                                            W, spec, out_ext, zo, colbuf.data());
                        Eigen::Map<const Mat> colM(colbuf.data(), K, cols);
                        Eigen::Map<Mat> gWm(wn->grad.data(), OC, K);
                        gWm.noalias() += gM * colM.transpose();
                    }
                    if (need_x) {
                        Eigen::Map<Mat> colM(colbuf.data(), K, cols);
                        colM.noalias() = Wm.transpose() * gM;
                        detail::col2im_slab(colbuf.data(), D, H, W, spec, out_ext, zo,
                                            xn->grad.data() + n * spec.in_channels * D * H * W);
                    }
                }
            }
        });
}

}  // namespace vsdr
