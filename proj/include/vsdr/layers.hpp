#pragma once

#include <cmath>

#include "vsdr/conv3d.hpp"
#include "vsdr/nn_ops.hpp"
#include "vsdr/ops.hpp"
#include "vsdr/rng.hpp"

namespace vsdr {

// conv -> batchnorm -> relu, the unit every block is made of. Holds its
// learnable tensors and the BN running buffers.
template <typename T>
struct ConvBnRelu {
    Conv3dSpec spec;
    Tensor<T> w, b, gamma, beta;
    std::vector<T> running_mean, running_var;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        auto y = conv3d(x, w, b, spec);
        y = batchnorm3d(y, gamma, beta, running_mean, running_var, training);
        return relu(y);
    }
};

// He-normal weights (std = sqrt(2/fan_in)), zero bias, identity-at-rest BN.
template <typename T>
ConvBnRelu<T> make_conv_bn_relu(const Conv3dSpec& spec, Rng& rng) {
    ConvBnRelu<T> u;
    u.spec = spec;
    const int64_t fan_in = spec.in_channels * spec.kernel_volume();
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> w(static_cast<size_t>(spec.out_channels * fan_in));
    for (auto& v : w) v = static_cast<T>(rng.normal(0.0, stddev));
    u.w = Tensor<T>::from_data(
        {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]},
        std::move(w), /*requires_grad=*/true);
    u.b = Tensor<T>::zeros({spec.out_channels}, true);
    u.gamma = Tensor<T>::filled({spec.out_channels}, T(1), true);
    u.beta = Tensor<T>::zeros({spec.out_channels}, true);
    u.running_mean.assign(static_cast<size_t>(spec.out_channels), T(0));
    u.running_var.assign(static_cast<size_t>(spec.out_channels), T(1));
    return u;
}

// Two conv-bn-relu units back to back.
template <typename T>
struct DoubleConv {
    ConvBnRelu<T> c1, c2;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return c2.forward(c1.forward(x, training), training);
    }
};

// Encoder block: double conv, optionally followed by concatenating the
// block input onto the conv output — the residual-as-concatenation wiring,
// which makes the block emit in_ch + out_ch channels. Pooling is applied
// by the caller so the pre-pool tensor is available as the skip.
template <typename T>
struct EncoderBlock {
    DoubleConv<T> dc;
    bool residual_concat = false;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        auto h = dc.forward(x, training);
        return residual_concat ? concat_channels(x, h) : h;
    }
};

// Bottleneck. Plain form: two sequential conv-bn-relu units. Dilated form:
// parallel conv-bn-relu branches over the same input, one per dilation
// rate, summed elementwise.
template <typename T>
struct Bottleneck {
    bool dilated = false;
    std::vector<ConvBnRelu<T>> units;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (!dilated) {
            auto h = units[0].forward(x, training);
            return units[1].forward(h, training);
        }
        auto acc = units[0].forward(x, training);
        for (size_t i = 1; i < units.size(); ++i) acc = add(acc, units[i].forward(x, training));
        return acc;
    }
};

}  // namespace vsdr
