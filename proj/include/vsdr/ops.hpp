#pragma once

#include <cmath>
#include <cstdint>

#include "vsdr/tensor.hpp"

namespace vsdr {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Binary ops accept equal shapes, or a rank-5 [N,C,D,H,W] tensor paired
// with a per-channel vector [C] broadcast over batch and spatial dims.
// Anything else is rejected.
enum class BinaryLayout { same, channel_vec_rhs, channel_vec_lhs };

template <typename T>
BinaryLayout binary_layout(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return BinaryLayout::same;
    if (a.rank() == 5 && b.rank() == 1 && b.shape()[0] == a.shape()[1])
        return BinaryLayout::channel_vec_rhs;
    if (b.rank() == 5 && a.rank() == 1 && a.shape()[0] == b.shape()[1])
        return BinaryLayout::channel_vec_lhs;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) +
                     " (equal shapes or [N,C,D,H,W] with per-channel [C] required)");
}

// Applies f(a_i, channel_value) over a rank-5 tensor with a [C] vector.
template <typename T, typename F>
void for_each_channel_pair(const Shape& s5, F&& f) {
    const int64_t n = s5[0], c = s5[1], spatial = s5[2] * s5[3] * s5[4];
    int64_t idx = 0;
    for (int64_t bn = 0; bn < n; ++bn)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t sp = 0; sp < spatial; ++sp, ++idx) f(idx, ch);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    using detail::BinaryLayout;
    const auto layout = detail::binary_layout(a, b, "add");
    const Tensor<T>& big = (layout == BinaryLayout::channel_vec_lhs) ? b : a;
    const Tensor<T>& small = (layout == BinaryLayout::channel_vec_lhs) ? a : b;
    std::vector<T> out(big.values().begin(), big.values().end());
    if (layout == BinaryLayout::same) {
        const auto bv = b.values();
        for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    } else {
        const auto cv = small.values();
        detail::for_each_channel_pair<T>(big.shape(), [&](int64_t i, int64_t ch) { out[i] += cv[ch]; });
    }
    auto an = a.node(), bn = b.node();
    return detail::make_op_result<T>(
        "add", big.shape(), std::move(out), {an, bn}, [an, bn, layout](detail::TensorNode<T>& self) {
            auto& bign = (layout == BinaryLayout::channel_vec_lhs) ? bn : an;
            auto& smalln = (layout == BinaryLayout::channel_vec_lhs) ? an : bn;
            if (bign->requires_grad) bign->accumulate_grad(self.grad);
            if (smalln->requires_grad) {
                if (layout == BinaryLayout::same) {
                    smalln->accumulate_grad(self.grad);
                } else {
                    smalln->ensure_grad();
                    detail::for_each_channel_pair<T>(
                        self.shape, [&](int64_t i, int64_t ch) { smalln->grad[ch] += self.grad[i]; });
                }
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    using detail::BinaryLayout;
    const auto layout = detail::binary_layout(a, b, "mul");
    const Tensor<T>& big = (layout == BinaryLayout::channel_vec_lhs) ? b : a;
    const Tensor<T>& small = (layout == BinaryLayout::channel_vec_lhs) ? a : b;
    std::vector<T> out(big.values().begin(), big.values().end());
    if (layout == BinaryLayout::same) {
        const auto bv = b.values();
        for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    } else {
        const auto cv = small.values();
        detail::for_each_channel_pair<T>(big.shape(), [&](int64_t i, int64_t ch) { out[i] *= cv[ch]; });
    }
    auto an = a.node(), bn = b.node();
    return detail::make_op_result<T>(
        "mul", big.shape(), std::move(out), {an, bn}, [an, bn, layout](detail::TensorNode<T>& self) {
            auto& bign = (layout == BinaryLayout::channel_vec_lhs) ? bn : an;
            auto& smalln = (layout == BinaryLayout::channel_vec_lhs) ? an : bn;
            if (bign->requires_grad) {
                bign->ensure_grad();
                if (layout == BinaryLayout::same) {
                    for (size_t i = 0; i < self.grad.size(); ++i)
                        bign->grad[i] += self.grad[i] * smalln->value[i];
                } else {
                    detail::for_each_channel_pair<T>(self.shape, [&](int64_t i, int64_t ch) {
                        bign->grad[i] += self.grad[i] * smalln->value[ch];
                    });
                }
            }
            if (smalln->requires_grad) {
                smalln->ensure_grad();
                if (layout == BinaryLayout::same) {
                    for (size_t i = 0; i < self.grad.size(); ++i)
                        smalln->grad[i] += self.grad[i] * bign->value[i];
                } else {
                    detail::for_each_channel_pair<T>(self.shape, [&](int64_t i, int64_t ch) {
                        smalln->grad[ch] += self.grad[i] * bign->value[i];
                    });
                }
            }
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op_result<T>("sub", a.shape(), std::move(out), {an, bn},
                                     [an, bn](detail::TensorNode<T>& self) {
                                         if (an->requires_grad) an->accumulate_grad(self.grad);
                                         if (bn->requires_grad) {
                                             bn->ensure_grad();
                                             for (size_t i = 0; i < self.grad.size(); ++i)
                                                 bn->grad[i] -= self.grad[i];
                                         }
                                     });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v = -v;
    auto an = a.node();
    return detail::make_op_result<T>("neg", a.shape(), std::move(out), {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             an->grad[i] -= self.grad[i];
                                     });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    auto an = a.node();
    return detail::make_op_result<T>("relu", a.shape(), std::move(out), {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             if (an->value[i] > T(0)) an->grad[i] += self.grad[i];
                                     });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) {
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    auto an = a.node();
    return detail::make_op_result<T>("sigmoid", a.shape(), std::move(out), {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i) {
                                             const T s = self.value[i];
                                             an->grad[i] += self.grad[i] * s * (T(1) - s);
                                         }
                                     });
}

// Natural log; the domain is checked up front, callers clamp first.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    for (const T v : a.values())
        if (!(v > T(0))) throw ValueError("log: non-positive input value " + std::to_string(v));
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v = std::log(v);
    auto an = a.node();
    return detail::make_op_result<T>("log", a.shape(), std::move(out), {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             an->grad[i] += self.grad[i] / an->value[i];
                                     });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v += c;
    auto an = a.node();
    return detail::make_op_result<T>("add_scalar", a.shape(), std::move(out), {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (an->requires_grad) an->accumulate_grad(self.grad);
                                     });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= c;
    auto an = a.node();
    return detail::make_op_result<T>("mul_scalar", a.shape(), std::move(out), {an},
                                     [an, c](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             an->grad[i] += self.grad[i] * c;
                                     });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (const T v : a.values()) acc += v;
    auto an = a.node();
    return detail::make_op_result<T>("sum", Shape{1}, std::vector<T>{acc}, {an},
                                     [an](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (auto& g : an->grad) g += self.grad[0];
                                     });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    T acc = 0;
    for (const T v : a.values()) acc += v;
    const T inv = T(1) / static_cast<T>(a.numel());
    auto an = a.node();
    return detail::make_op_result<T>("mean", Shape{1}, std::vector<T>{acc * inv}, {an},
                                     [an, inv](detail::TensorNode<T>& self) {
                                         if (!an->requires_grad) return;
                                         an->ensure_grad();
                                         for (auto& g : an->grad) g += self.grad[0] * inv;
                                     });
}

// Channel-axis concatenation of two [N,C,D,H,W] tensors; backward splits
// the gradient back to the two inputs in order.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 5 || b.rank() != 5)
        throw ShapeError("concat_channels: rank-5 tensors required, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    for (int axis : {0, 2, 3, 4})
        if (sa[axis] != sb[axis])
            throw ShapeError("concat_channels: non-channel mismatch " + shape_str(sa) + " vs " +
                             shape_str(sb));
    const int64_t n = sa[0], ca = sa[1], cb = sb[1], spatial = sa[2] * sa[3] * sa[4];
    Shape so = sa;
    so[1] = ca + cb;
    std::vector<T> out(static_cast<size_t>(numel(so)));
    const auto av = a.values();
    const auto bv = b.values();
    for (int64_t bn = 0; bn < n; ++bn) {
        T* dst = out.data() + bn * (ca + cb) * spatial;
        std::copy_n(av.data() + bn * ca * spatial, ca * spatial, dst);
        std::copy_n(bv.data() + bn * cb * spatial, cb * spatial, dst + ca * spatial);
    }
    auto an = a.node(), bn2 = b.node();
    return detail::make_op_result<T>(
        "concat_channels", std::move(so), std::move(out), {an, bn2},
        [an, bn2, n, ca, cb, spatial](detail::TensorNode<T>& self) {
            for (int64_t bn = 0; bn < n; ++bn) {
                const T* src = self.grad.data() + bn * (ca + cb) * spatial;
                if (an->requires_grad) {
                    an->ensure_grad();
                    T* dst = an->grad.data() + bn * ca * spatial;
                    for (int64_t i = 0; i < ca * spatial; ++i) dst[i] += src[i];
                }
                if (bn2->requires_grad) {
                    bn2->ensure_grad();
                    T* dst = bn2->grad.data() + bn * cb * spatial;
                    for (int64_t i = 0; i < cb * spatial; ++i) dst[i] += src[ca * spatial + i];
                }
            }
        });
}

}  // namespace vsdr
