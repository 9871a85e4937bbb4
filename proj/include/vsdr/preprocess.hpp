#pragma once

#include <array>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "vsdr/clahe.hpp"
#include "vsdr/common.hpp"
#include "vsdr/volume.hpp"

namespace vsdr {

// Parses "DxHxW" (e.g. "80x256x256") into extents.
inline std::array<int64_t, 3> parse_extents3(const std::string& s, const std::string& what) {
    std::array<int64_t, 3> out{};
    size_t start = 0;
    for (int a = 0; a < 3; ++a) {
        const size_t end = (a < 2) ? s.find('x', start) : s.size();
        if (end == std::string::npos)
            throw ValueError(what + ": expected DxHxW extents, got '" + s + "'");
        out[a] = detail::parse_int(s.substr(start, end - start), what);
        if (out[a] < 1) throw ValueError(what + ": extents must be positive, got '" + s + "'");
        start = end + 1;
    }
    return out;
}

struct PreprocessParams {
    ClaheParams clahe;
    std::array<int64_t, 3> crop{88, 400, 400};
    std::array<int64_t, 3> target{80, 256, 256};

    void validate() const {
        clahe.validate();
        for (int a = 0; a < 3; ++a) {
            if (crop[a] < 1) throw ValueError("preprocess: crop extents must be positive");
            if (target[a] < 1) throw ValueError("preprocess: resample extents must be positive");
        }
    }
};

// Plain-text key=value config. '#' lines and blank lines are skipped.
// Keys: tiles (square grid), tiles_y, tiles_x, clip_limit, bins,
// crop (DxHxW), resample (DxHxW). Unknown keys are rejected.
inline PreprocessParams parse_preprocess_config(std::istream& in, PreprocessParams base = {}) {
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ValueError("config line " + std::to_string(line_no) +
                             ": expected key=value, got '" + t + "'");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key == "tiles") {
            base.clahe.tiles_y = base.clahe.tiles_x = detail::parse_int(value, key);
        } else if (key == "tiles_y") {
            base.clahe.tiles_y = detail::parse_int(value, key);
        } else if (key == "tiles_x") {
            base.clahe.tiles_x = detail::parse_int(value, key);
        } else if (key == "clip_limit") {
            base.clahe.clip_limit = detail::parse_double(value, key);
        } else if (key == "bins") {
            base.clahe.bins = detail::parse_int(value, key);
        } else if (key == "crop") {
            base.crop = parse_extents3(value, key);
        } else if (key == "resample") {
            base.target = parse_extents3(value, key);
        } else {
            throw ValueError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                             "'");
        }
    }
    base.validate();
    return base;
}

inline PreprocessParams load_preprocess_config(const std::string& path,
                                               PreprocessParams base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    return parse_preprocess_config(in, base);
}

// Intensity pipeline: slice-wise adaptive equalization, min-max
// normalization to [0,1], centered crop, trilinear resample.
template <typename T>
Volume<T> preprocess_intensity(const Volume<T>& v, const PreprocessParams& p) {
    p.validate();
    if (v.kind != VolumeKind::intensity)
        throw ValueError("preprocess_intensity: expected an intensity volume");
    Volume<T> x = clahe_volume(v, p.clahe);
    x = normalize_volume(x);
    x = center_crop(x, p.crop);
    return resample(x, p.target);
}

// Mask pipeline: equalization and normalization are skipped; the crop is
// identical to the intensity path and the resample is nearest-neighbor, so
// labels stay binary.
template <typename T>
Volume<T> preprocess_mask(const Volume<T>& m, const PreprocessParams& p) {
    p.validate();
    if (m.kind != VolumeKind::mask) throw ValueError("preprocess_mask: expected a mask volume");
    check_mask_binary(m, "preprocess_mask");
    Volume<T> x = center_crop(m, p.crop);
    return resample(x, p.target);
}

template <typename T>
struct PreprocessedCase {
    Volume<T> image;
    std::optional<Volume<T>> mask;
};

template <typename T>
PreprocessedCase<T> preprocess_case(const Volume<T>& image, const std::optional<Volume<T>>& mask,
                                    const PreprocessParams& p) {
    if (mask && mask->extents != image.extents)
        throw ShapeError("preprocess_case: mask extents " + std::to_string(mask->extents[0]) +
                         "x" + std::to_string(mask->extents[1]) + "x" +
                         std::to_string(mask->extents[2]) + " do not match image extents " +
                         std::to_string(image.extents[0]) + "x" + std::to_string(image.extents[1]) +
                         "x" + std::to_string(image.extents[2]));
    PreprocessedCase<T> out;
    out.image = preprocess_intensity(image, p);
    if (mask) out.mask = preprocess_mask(*mask, p);
    return out;
}

}  // namespace vsdr
