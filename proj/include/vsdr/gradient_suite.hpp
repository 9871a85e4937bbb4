#pragma once

#include <vector>

#include "vsdr/conv3d.hpp"
#include "vsdr/gradcheck.hpp"
#include "vsdr/loss.hpp"
#include "vsdr/nn_ops.hpp"
#include "vsdr/ops.hpp"
#include "vsdr/rng.hpp"

namespace vsdr {

namespace detail {

inline std::vector<double> suite_randn(Rng& rng, int64_t n, double scale = 1.0) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Values bounded away from zero so ReLU kinks cannot sit inside the
// finite-difference step.
inline std::vector<double> suite_randn_off_kink(Rng& rng, int64_t n) {
    auto v = suite_randn(rng, n);
    for (auto& x : v)
        if (std::abs(x) < 0.05) x += x < 0 ? -0.3 : 0.3;
    return v;
}

inline std::vector<double> suite_probs(Rng& rng, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = 0.05 + 0.9 * rng.uniform();
    return v;
}

inline std::vector<double> suite_mask(Rng& rng, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return v;
}

}  // namespace detail

// Finite-difference audit of every differentiable building block the
// network composes: convolutions at each bottleneck dilation rate, pooling,
// train-mode batch normalization, trilinear upsampling, channel
// concatenation, activation composites, and the loss terms. All checks use
// 64-bit scalars on inputs of at most 4 voxels per axis; each gradient is
// compared against central differences with the default 1e-5 tolerance.
// Objectives are projected onto a fixed random probe so element-permutation
// errors cannot cancel.
inline std::vector<GradCheckResult> run_gradient_suite(uint64_t seed = 7) {
    using T64 = Tensor<double>;
    Rng rng(derive_seed(seed, 0x6D5));
    std::vector<GradCheckResult> out;

    auto projected = [](const Tensor<double>& y, const Tensor<double>& probe) {
        return sum(mul(y, probe));
    };

    // Convolution at every dilation rate used by the bottleneck.
    for (int64_t d = 1; d <= 4; ++d) {
        const auto spec = Conv3dSpec::same_padded(2, 2, 3, d);
        const Shape xs{1, 2, 4, 4, 4};
        const Shape ws{2, 2, 3, 3, 3};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn(rng, numel(xs))},
                                      {"w", ws, detail::suite_randn(rng, numel(ws), 0.5)},
                                      {"b", {2}, detail::suite_randn(rng, 2)}};
        auto probe = T64::from_data(xs, detail::suite_randn(rng, numel(xs)));
        out.push_back(check_gradients(
            "conv3d_d" + std::to_string(d), inputs, [&](const std::vector<T64>& in) {
                return projected(conv3d(in[0], in[1], in[2], spec), probe);
            }));
    }

    {
        const Shape xs{1, 2, 4, 4, 2};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn(rng, numel(xs))}};
        auto probe = T64::from_data({1, 2, 2, 2, 1}, detail::suite_randn(rng, 8));
        out.push_back(check_gradients("maxpool", inputs, [&](const std::vector<T64>& in) {
            return projected(maxpool3d(in[0]), probe);
        }));
    }

    {
        const Shape xs{2, 2, 2, 2, 2};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn(rng, numel(xs))},
                                      {"gamma", {2}, {1.1, 0.9}},
                                      {"beta", {2}, {0.2, -0.3}}};
        auto probe = T64::from_data(xs, detail::suite_randn(rng, numel(xs)));
        out.push_back(check_gradients(
            "batchnorm_train", inputs, [&](const std::vector<T64>& in) {
                std::vector<double> rm(2, 0.0), rv(2, 1.0);
                return projected(batchnorm3d(in[0], in[1], in[2], rm, rv, true), probe);
            }));
    }

    {
        const Shape xs{1, 2, 2, 2, 2};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn(rng, numel(xs))}};
        auto probe = T64::from_data({1, 2, 4, 4, 4}, detail::suite_randn(rng, 128));
        out.push_back(check_gradients("upsample_trilinear", inputs,
                                      [&](const std::vector<T64>& in) {
                                          return projected(upsample_trilinear(in[0], 2), probe);
                                      }));
    }

    {
        const Shape as{1, 2, 2, 2, 2}, bs{1, 3, 2, 2, 2};
        std::vector<GradInput> inputs{{"a", as, detail::suite_randn(rng, numel(as))},
                                      {"b", bs, detail::suite_randn(rng, numel(bs))}};
        auto probe = T64::from_data({1, 5, 2, 2, 2}, detail::suite_randn(rng, 40));
        out.push_back(check_gradients("concat_channels", inputs,
                                      [&](const std::vector<T64>& in) {
                                          return projected(concat_channels(in[0], in[1]), probe);
                                      }));
    }

    // Activation composites as the network uses them: conv feeding a ReLU,
    // and a 1x1x1 head feeding the sigmoid.
    {
        const auto spec = Conv3dSpec::same_padded(1, 2, 3, 1);
        const Shape xs{1, 1, 3, 3, 3};
        const Shape ws{2, 1, 3, 3, 3};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn_off_kink(rng, numel(xs))},
                                      {"w", ws, detail::suite_randn(rng, numel(ws), 0.5)},
                                      {"b", {2}, {0.4, -0.6}}};
        auto probe = T64::from_data({1, 2, 3, 3, 3}, detail::suite_randn(rng, 54));
        out.push_back(check_gradients(
            "relu_after_conv", inputs, [&](const std::vector<T64>& in) {
                return projected(relu(conv3d(in[0], in[1], in[2], spec)), probe);
            }));
    }
    {
        const auto spec = Conv3dSpec::same_padded(2, 1, 1, 1);
        const Shape xs{1, 2, 3, 3, 3};
        std::vector<GradInput> inputs{{"x", xs, detail::suite_randn(rng, numel(xs))},
                                      {"w", {1, 2, 1, 1, 1}, {0.7, -0.4}},
                                      {"b", {1}, {0.1}}};
        auto probe = T64::from_data({1, 1, 3, 3, 3}, detail::suite_randn(rng, 27));
        out.push_back(check_gradients(
            "sigmoid_after_head_conv", inputs, [&](const std::vector<T64>& in) {
                return projected(sigmoid(conv3d(in[0], in[1], in[2], spec)), probe);
            }));
    }

    // Loss terms: gradients flow through the prediction only.
    {
        const Shape s{1, 1, 2, 4, 4};
        auto y = T64::from_data(s, detail::suite_mask(rng, numel(s)));
        std::vector<GradInput> inputs{{"p", s, detail::suite_probs(rng, numel(s))}};
        out.push_back(check_gradients("dice_loss", inputs, [&](const std::vector<T64>& in) {
            return dice_loss(y, in[0]);
        }));
        out.push_back(check_gradients("bce_loss", inputs, [&](const std::vector<T64>& in) {
            return bce_loss(y, in[0]);
        }));
        out.push_back(check_gradients("combined_loss", inputs, [&](const std::vector<T64>& in) {
            return combined_loss(y, in[0]).total;
        }));
    }

    return out;
}

}  // namespace vsdr
