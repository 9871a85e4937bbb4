#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vsdr/checkpoint.hpp"
#include "vsdr/common.hpp"
#include "vsdr/tensor.hpp"

namespace vsdr {

// Adam with bias correction:
//   t <- t+1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
struct AdamState {
    T lr = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    int64_t t = 0;
    std::vector<std::vector<T>> m, v;  // parallel to the parameter list
};

// `params` is any range of {name, tensor} items, e.g. Model<T>::parameters().
// The state lazily sizes itself to the parameter list on first use; the
// gradients are validated (present and finite) before any mutation so a
// failed step leaves parameters and state untouched.
template <typename T, typename Params>
void adam_step(const Params& params, AdamState<T>& st) {
    const size_t n = params.size();
    if (st.t == 0 && st.m.empty() && st.v.empty()) {
        st.m.resize(n);
        st.v.resize(n);
        for (size_t i = 0; i < n; ++i) {
            st.m[i].assign(static_cast<size_t>(params[i].tensor.numel()), T(0));
            st.v[i].assign(static_cast<size_t>(params[i].tensor.numel()), T(0));
        }
    }
    if (st.m.size() != n || st.v.size() != n)
        throw ShapeError("adam: state tracks " + std::to_string(st.m.size()) +
                         " parameters, step got " + std::to_string(n));
    for (size_t i = 0; i < n; ++i) {
        const auto& p = params[i];
        if (st.m[i].size() != static_cast<size_t>(p.tensor.numel()))
            throw ShapeError("adam: state size mismatch for parameter '" + p.name + "'");
        if (!p.tensor.has_grad())
            throw ValueError("adam: parameter '" + p.name + "' has no gradient");
        for (const T g : p.tensor.grad())
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericError("adam: non-finite gradient in parameter '" + p.name + "'");
    }

    ++st.t;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(st.beta1),
                                                 static_cast<double>(st.t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(st.beta2),
                                                 static_cast<double>(st.t)));
    for (size_t i = 0; i < n; ++i) {
        Tensor<T> tensor = params[i].tensor;  // shared handle
        auto vals = tensor.mutable_values();
        const auto grad = tensor.grad();
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (size_t j = 0; j < vals.size(); ++j) {
            const T g = grad[j];
            m[j] = st.beta1 * m[j] + (T(1) - st.beta1) * g;
            v[j] = st.beta2 * v[j] + (T(1) - st.beta2) * g * g;
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            vals[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Optimizer sidecar file: the same little-endian entry container as model
// checkpoints, under its own magic. Entries are "<param>.m" / "<param>.v" in
// parameter order, so restoring against a different architecture fails loudly.
inline constexpr char kOptimizerMagic[] = "VSDO1";

template <typename T, typename Params>
void save_adam_state(const AdamState<T>& st, const Params& params, const std::string& path) {
    if (st.m.size() != params.size())
        throw ShapeError("save_adam_state: state does not match the parameter list");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot create '" + path + "'");
    detail::write_magic(os, kOptimizerMagic);
    detail::write_u32(os, sizeof(T));
    detail::write_u64(os, static_cast<uint64_t>(st.t));
    const T hyper[4] = {st.lr, st.beta1, st.beta2, st.eps};
    detail::write_scalars(os, hyper, 4);
    detail::write_u64(os, static_cast<uint64_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const Shape shape{static_cast<int64_t>(st.m[i].size())};
        detail::write_entry(os, params[i].name + ".m", shape, st.m[i].data());
        detail::write_entry(os, params[i].name + ".v", shape, st.v[i].data());
    }
    if (!os) throw IoError("failed writing '" + path + "'");
}

template <typename T, typename Params>
AdamState<T> load_adam_state(const std::string& path, const Params& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    detail::check_magic(is, kOptimizerMagic, "optimizer state");
    const uint32_t width = detail::read_u32(is);
    if (width != sizeof(T))
        throw IoError("optimizer state '" + path + "' holds " + std::to_string(width * 8) +
                      "-bit scalars, this run uses " + std::to_string(sizeof(T) * 8) + "-bit");
    AdamState<T> st;
    st.t = static_cast<int64_t>(detail::read_u64(is));
    T hyper[4];
    detail::read_scalars(is, hyper, 4);
    st.lr = hyper[0];
    st.beta1 = hyper[1];
    st.beta2 = hyper[2];
    st.eps = hyper[3];
    const uint64_t count = detail::read_u64(is);
    if (count != params.size())
        throw IoError("optimizer state '" + path + "' tracks " + std::to_string(count) +
                      " parameters, model has " + std::to_string(params.size()));
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        for (const char* part : {".m", ".v"}) {
            const std::string name = detail::read_entry_name(is);
            const std::string expect = params[i].name + part;
            if (name != expect)
                throw IoError("optimizer state '" + path + "': expected entry '" + expect +
                              "', found '" + name + "'");
            const Shape shape = detail::read_entry_shape(is);
            if (shape != Shape{params[i].tensor.numel()})
                throw IoError("optimizer state '" + path + "': entry '" + name +
                              "' has wrong extent");
            auto& dst = part[1] == 'm' ? st.m[i] : st.v[i];
            dst.resize(static_cast<size_t>(params[i].tensor.numel()));
            detail::read_scalars(is, dst.data(), dst.size());
        }
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw IoError("optimizer state '" + path + "' has trailing bytes");
    return st;
}

}  // namespace vsdr
