#pragma once

#include <array>
#include <functional>
#include <string>

#include "vsdr/layers.hpp"

namespace vsdr {

enum class Variant : uint32_t { baseline_unet = 0, unet_dr = 1 };

inline const char* variant_name(Variant v) {
    return v == Variant::baseline_unet ? "baseline_unet" : "unet_dr";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "baseline_unet") return Variant::baseline_unet;
    if (s == "unet_dr") return Variant::unet_dr;
    throw ValueError("unknown variant '" + s + "' (expected baseline_unet or unet_dr)");
}

struct NetworkConfig {
    Variant variant = Variant::unet_dr;
    int64_t base_channels = 24;
    int64_t levels = 3;
    std::vector<int64_t> dilation_rates{1, 2, 3, 4};
    int64_t input_channels = 1;
    int64_t output_channels = 1;

    void validate() const {
        if (base_channels < 1) throw ValueError("NetworkConfig: base_channels must be >= 1");
        if (levels < 1 || levels > 5) throw ValueError("NetworkConfig: levels must be in [1,5]");
        if (dilation_rates.empty()) throw ValueError("NetworkConfig: dilation_rates must be nonempty");
        for (int64_t r : dilation_rates)
            if (r < 1) throw ValueError("NetworkConfig: dilation rates must be >= 1");
        if (input_channels < 1 || output_channels < 1)
            throw ValueError("NetworkConfig: channel counts must be >= 1");
    }
};

// Encoder/decoder U shape with three resolution halvings by default.
// Encoder blocks widen as F, 2F, 4F. The baseline variant uses plain
// blocks and a plain 8F double-conv bottleneck; the dilated variant uses
// residual-concat encoder blocks and parallel dilated bottleneck branches
// at width 2F, the width at which the dilated model undercuts the baseline
// parameter count at equal F while the published ~2.6M vs ~3.3M magnitudes
// are preserved at F=24.
template <typename T>
class Model {
public:
    NetworkConfig config;
    std::vector<EncoderBlock<T>> encoder;
    Bottleneck<T> bottleneck;
    std::vector<DoubleConv<T>> decoder;  // decoder[0] is the deepest stage
    Tensor<T> head_w, head_b;
    Conv3dSpec head_spec;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (x.rank() != 5)
            throw ShapeError("Model::forward: input must be rank-5 [N,C,D,H,W], got " +
                             shape_str(x.shape()));
        if (x.shape()[1] != config.input_channels)
            throw ShapeError("Model::forward: input has " + std::to_string(x.shape()[1]) +
                             " channels, model expects " + std::to_string(config.input_channels));
        const int64_t div = int64_t(1) << config.levels;
        static const char* axis_names[3] = {"depth", "height", "width"};
        for (int a = 0; a < 3; ++a)
            if (x.shape()[2 + a] % div != 0)
                throw ShapeError(std::string("Model::forward: ") + axis_names[a] + " extent " +
                                 std::to_string(x.shape()[2 + a]) + " is not divisible by " +
                                 std::to_string(div));

        std::vector<Tensor<T>> skips;
        skips.reserve(encoder.size());
        Tensor<T> h = x;
        for (auto& block : encoder) {
            h = block.forward(h, training);
            skips.push_back(h);  // captured before pooling
            h = maxpool3d(h);
        }
        h = bottleneck.forward(h, training);
        for (size_t i = 0; i < decoder.size(); ++i) {
            h = upsample_trilinear(h, 2);
            h = concat_channels(h, skips[skips.size() - 1 - i]);
            h = decoder[i].forward(h, training);
        }
        return sigmoid(conv3d(h, head_w, head_b, head_spec));
    }

    struct NamedTensor {
        std::string name;
        Tensor<T> tensor;
    };
    struct NamedBuffer {
        std::string name;
        std::vector<T>* data;
    };

    // Stable parameter order: encoder blocks, bottleneck units, decoder
    // stages, head — within a unit: conv weight, conv bias, bn gamma,
    // bn beta. Checkpoints and optimizer state rely on this order.
    std::vector<NamedTensor> parameters() const {
        std::vector<NamedTensor> out;
        const_cast<Model*>(this)->for_each_unit([&](const std::string& p, ConvBnRelu<T>& u) {
            out.push_back({p + ".weight", u.w});
            out.push_back({p + ".bias", u.b});
            out.push_back({p + ".bn.gamma", u.gamma});
            out.push_back({p + ".bn.beta", u.beta});
        });
        out.push_back({"head.weight", head_w});
        out.push_back({"head.bias", head_b});
        return out;
    }

    std::vector<NamedBuffer> buffers() {
        std::vector<NamedBuffer> out;
        for_each_unit([&](const std::string& p, ConvBnRelu<T>& u) {
            out.push_back({p + ".bn.running_mean", &u.running_mean});
            out.push_back({p + ".bn.running_var", &u.running_var});
        });
        return out;
    }

    template <typename F>
    void for_each_unit(F&& fn) {
        for (size_t i = 0; i < encoder.size(); ++i) {
            const std::string p = "enc" + std::to_string(i + 1);
            fn(p + ".conv1", encoder[i].dc.c1);
            fn(p + ".conv2", encoder[i].dc.c2);
        }
        for (size_t i = 0; i < bottleneck.units.size(); ++i) {
            const std::string p = bottleneck.dilated
                                      ? "bottleneck.branch" + std::to_string(i + 1)
                                      : "bottleneck.conv" + std::to_string(i + 1);
            fn(p, bottleneck.units[i]);
        }
        for (size_t i = 0; i < decoder.size(); ++i) {
            const std::string p = "dec" + std::to_string(i + 1);
            fn(p + ".conv1", decoder[i].c1);
            fn(p + ".conv2", decoder[i].c2);
        }
    }
};

template <typename T>
Model<T> build_model(const NetworkConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0xA0DE1));
    Model<T> m;
    m.config = config;
    const int64_t F = config.base_channels;
    const bool dr = config.variant == Variant::unet_dr;

    auto same3 = [](int64_t in, int64_t out) { return Conv3dSpec::same_padded(in, out, 3, 1); };

    int64_t in_ch = config.input_channels;
    std::vector<int64_t> skip_ch;
    for (int64_t i = 0; i < config.levels; ++i) {
        const int64_t out = F << i;
        EncoderBlock<T> block;
        block.residual_concat = dr;
        block.dc.c1 = make_conv_bn_relu<T>(same3(in_ch, out), rng);
        block.dc.c2 = make_conv_bn_relu<T>(same3(out, out), rng);
        m.encoder.push_back(std::move(block));
        in_ch = dr ? in_ch + out : out;
        skip_ch.push_back(in_ch);
    }

    int64_t bott_out;
    if (dr) {
        m.bottleneck.dilated = true;
        bott_out = 2 * F;
        for (int64_t r : config.dilation_rates)
            m.bottleneck.units.push_back(
                make_conv_bn_relu<T>(Conv3dSpec::same_padded(in_ch, bott_out, 3, r), rng));
    } else {
        m.bottleneck.dilated = false;
        bott_out = F << config.levels;
        m.bottleneck.units.push_back(make_conv_bn_relu<T>(same3(in_ch, bott_out), rng));
        m.bottleneck.units.push_back(make_conv_bn_relu<T>(same3(bott_out, bott_out), rng));
    }

    int64_t prev = bott_out;
    for (int64_t i = config.levels - 1; i >= 0; --i) {
        const int64_t out = F << i;
        DoubleConv<T> dc;
        dc.c1 = make_conv_bn_relu<T>(same3(prev + skip_ch[static_cast<size_t>(i)], out), rng);
        dc.c2 = make_conv_bn_relu<T>(same3(out, out), rng);
        m.decoder.push_back(std::move(dc));
        prev = out;
    }

    m.head_spec = Conv3dSpec::same_padded(prev, config.output_channels, 1, 1);
    const double stddev = std::sqrt(2.0 / static_cast<double>(prev));
    std::vector<T> hw(static_cast<size_t>(config.output_channels * prev));
    for (auto& v : hw) v = static_cast<T>(rng.normal(0.0, stddev));
    m.head_w = Tensor<T>::from_data({config.output_channels, prev, 1, 1, 1}, std::move(hw), true);
    m.head_b = Tensor<T>::zeros({config.output_channels}, true);
    return m;
}

template <typename T>
int64_t count_parameters(const Model<T>& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.tensor.numel();
    return n;
}

// Measures how far a single-voxel perturbation reaches: runs `fragment` on
// an all-zero volume and on the same volume with the center voxel set to 1,
// and returns the bounding-box extents (per spatial axis) of the changed
// output voxels. Regions outside the receptive field see bit-identical
// arithmetic, so exact comparison is sound.
template <typename T>
std::array<int64_t, 3> receptive_field_probe(
    const std::function<Tensor<T>(const Tensor<T>&)>& fragment,
    const std::array<int64_t, 3>& input_extents, int64_t in_channels = 1) {
    NoGradGuard ng;
    const int64_t D = input_extents[0], H = input_extents[1], W = input_extents[2];
    auto base = Tensor<T>::zeros({1, in_channels, D, H, W});
    auto out0 = fragment(base);
    auto pert = base.clone();
    pert.mutable_values()[(D / 2 * H + H / 2) * W + W / 2] = T(1);
    auto out1 = fragment(pert);
    if (out0.shape() != out1.shape())
        throw ShapeError("receptive_field_probe: fragment output shape varies with input values");
    if (out1.rank() != 5)
        throw ShapeError("receptive_field_probe: fragment must produce a rank-5 tensor");

    const Shape& os = out1.shape();
    const int64_t Do = os[2], Ho = os[3], Wo = os[4], spatial = Do * Ho * Wo;
    std::array<int64_t, 3> lo{Do, Ho, Wo}, hi{-1, -1, -1};
    const auto a = out0.values();
    const auto b = out1.values();
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        const int64_t s = static_cast<int64_t>(i) % spatial;
        const std::array<int64_t, 3> c{s / (Ho * Wo), (s / Wo) % Ho, s % Wo};
        for (int axis = 0; axis < 3; ++axis) {
            lo[axis] = std::min(lo[axis], c[axis]);
            hi[axis] = std::max(hi[axis], c[axis]);
        }
    }
    if (hi[0] < 0)
        throw NumericError("receptive_field_probe: perturbation produced no output change");
    return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
}

// Re-initializes a unit so the probe cannot miss: every weight has
// magnitude >= 0.1 with a random sign, and the positive bias/shift keeps
// the relu in its linear region at the zero baseline.
template <typename T>
void probe_init(ConvBnRelu<T>& u, Rng& rng) {
    for (auto& w : u.w.mutable_values()) {
        const T mag = static_cast<T>(0.1 + 0.4 * rng.uniform());
        w = rng.uniform() < 0.5 ? -mag : mag;
    }
    for (auto& v : u.b.mutable_values()) v = T(0.1);
    for (auto& v : u.gamma.mutable_values()) v = T(1);
    for (auto& v : u.beta.mutable_values()) v = T(0.1);
    std::fill(u.running_mean.begin(), u.running_mean.end(), T(0));
    std::fill(u.running_var.begin(), u.running_var.end(), T(1));
}

}  // namespace vsdr
