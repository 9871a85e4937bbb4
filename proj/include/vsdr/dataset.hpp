#pragma once

#include <string>
#include <vector>

#include "vsdr/phantom.hpp"
#include "vsdr/rng.hpp"
#include "vsdr/tensor.hpp"
#include "vsdr/volume.hpp"

namespace vsdr {

// One training/evaluation case: image and binary mask as [1,1,D,H,W] tensors.
template <typename T>
struct Case {
    std::string id;
    Tensor<T> image;
    Tensor<T> mask;
};

template <typename T>
Case<T> case_from_volumes(std::string id, const Volume<T>& image, const Volume<T>& mask,
                          bool normalize = true) {
    check_volume(image, "case_from_volumes");
    check_volume(mask, "case_from_volumes");
    if (image.extents != mask.extents)
        throw ShapeError("case '" + id + "': image and mask extents differ");
    check_mask_binary(mask, ("case '" + id + "'").c_str());
    const Volume<T>* img = &image;
    Volume<T> normalized;
    if (normalize) {
        normalized = normalize_volume(image);
        img = &normalized;
    }
    const Shape shape{1, 1, image.extents[0], image.extents[1], image.extents[2]};
    Case<T> c;
    c.id = std::move(id);
    c.image = Tensor<T>::from_data(shape, img->data);
    c.mask = Tensor<T>::from_data(shape, mask.data);
    return c;
}

// Deterministic series of synthetic cases; case i uses derive_seed(seed, i)
// and the id "ph<i>".
template <typename T>
std::vector<Case<T>> make_phantom_cases(int64_t n, uint64_t seed, std::array<int64_t, 3> extents,
                                        const PhantomParams& params = {}) {
    if (n < 1) throw ValueError("make_phantom_cases: n must be >= 1");
    std::vector<Case<T>> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "ph%03lld", static_cast<long long>(i));
        auto ph = generate_phantom<T>(derive_seed(seed, static_cast<uint64_t>(i)), extents, params);
        out.push_back(case_from_volumes<T>(id, ph.image, ph.mask));
    }
    return out;
}

}  // namespace vsdr
