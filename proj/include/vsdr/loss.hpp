#pragma once

#include <cmath>

#include "vsdr/ops.hpp"
#include "vsdr/tensor.hpp"

namespace vsdr {

namespace detail {

template <typename T>
void check_loss_args(const Tensor<T>& y, const Tensor<T>& p, const char* op, bool check_range) {
    if (y.shape() != p.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(y.shape()) + " vs " +
                         shape_str(p.shape()));
    if (!check_range) return;
    for (const T v : y.values())
        if (!(v >= T(0) && v <= T(1)))
            throw ValueError(std::string(op) + ": mask value " + std::to_string(v) +
                             " outside [0,1]");
    for (const T v : p.values())
        if (!(v >= T(0) && v <= T(1)))
            throw ValueError(std::string(op) + ": prediction value " + std::to_string(v) +
                             " outside [0,1]");
}

}  // namespace detail

// Two-class soft Dice loss over foreground and background:
//   loss = 1 - sum_{k in {fg,bg}} (sum y_k p_k + eps) / (sum y_k + sum p_k + eps)
// with the background channel formed as (1-y, 1-p). Each class ratio tops
// out at 1/2, so a perfect prediction scores ~0 without a factor of 2.
// eps keeps empty classes finite; it is small enough (1e-12) not to disturb
// hand-computed fixtures at 1e-9 tolerance. Gradients flow to the
// prediction only; the mask is data.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& y, const Tensor<T>& p, T eps = T(1e-12)) {
    detail::check_loss_args(y, p, "dice_loss", /*check_range=*/true);
    const auto yv = y.values();
    const auto pv = p.values();
    const int64_t M = y.numel();

    T s_yp = 0, s_y = 0, s_p = 0;
    for (int64_t i = 0; i < M; ++i) {
        s_yp += yv[i] * pv[i];
        s_y += yv[i];
        s_p += pv[i];
    }
    // Background sums follow from the foreground ones:
    // sum (1-y)(1-p) = M - s_y - s_p + s_yp.
    const T num_f = s_yp + eps;
    const T den_f = s_y + s_p + eps;
    const T num_b = static_cast<T>(M) - s_y - s_p + s_yp + eps;
    const T den_b = T(2) * static_cast<T>(M) - s_y - s_p + eps;
    const T loss = T(1) - num_f / den_f - num_b / den_b;

    auto yn = y.node(), pn = p.node();
    return detail::make_op_result<T>(
        "dice_loss", Shape{1}, std::vector<T>{loss}, {pn, yn},
        [yn, pn, num_f, den_f, num_b, den_b, M](detail::TensorNode<T>& self) {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            const T g = self.grad[0];
            const T inv_df2 = T(1) / (den_f * den_f);
            const T inv_db2 = T(1) / (den_b * den_b);
            for (int64_t i = 0; i < M; ++i) {
                const T yi = yn->value[i];
                // d(num_f/den_f)/dp_i = (y_i*den_f - num_f) / den_f^2
                // d(num_b/den_b)/dp_i = (num_b - (1-y_i)*den_b) / den_b^2
                const T d_f = (yi * den_f - num_f) * inv_df2;
                const T d_b = (num_b - (T(1) - yi) * den_b) * inv_db2;
                pn->grad[i] += g * -(d_f + d_b);
            }
        });
}

// Mean binary cross entropy with the prediction clamped to
// [1e-7, 1-1e-7] before the logs. Values at or beyond the clamp get zero
// gradient (the clamp is flat there).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& y, const Tensor<T>& p) {
    detail::check_loss_args(y, p, "bce_loss", /*check_range=*/false);
    const T lo = T(1e-7), hi = T(1) - T(1e-7);
    const auto yv = y.values();
    const auto pv = p.values();
    const int64_t M = y.numel();

    T acc = 0;
    for (int64_t i = 0; i < M; ++i) {
        const T pc = std::min(std::max(pv[i], lo), hi);
        acc -= yv[i] * std::log(pc) + (T(1) - yv[i]) * std::log(T(1) - pc);
    }
    const T loss = acc / static_cast<T>(M);

    auto yn = y.node(), pn = p.node();
    return detail::make_op_result<T>(
        "bce_loss", Shape{1}, std::vector<T>{loss}, {pn, yn},
        [yn, pn, M, lo, hi](detail::TensorNode<T>& self) {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(M);
            for (int64_t i = 0; i < M; ++i) {
                const T pi = pn->value[i];
                if (pi <= lo || pi >= hi) continue;
                pn->grad[i] += g * (-yn->value[i] / pi + (T(1) - yn->value[i]) / (T(1) - pi));
            }
        });
}

// The training objective: Dice and BCE terms plus their sum, all scalar
// tensors on the same graph so total.backward() trains both terms.
template <typename T>
struct LossValue {
    Tensor<T> total;
    Tensor<T> dice_term;
    Tensor<T> bce_term;
};

template <typename T>
LossValue<T> combined_loss(const Tensor<T>& y, const Tensor<T>& p) {
    LossValue<T> lv;
    lv.dice_term = dice_loss(y, p);
    lv.bce_term = bce_loss(y, p);
    lv.total = add(lv.dice_term, lv.bce_term);
    return lv;
}

}  // namespace vsdr
