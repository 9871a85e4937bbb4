#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "vsdr/model.hpp"

namespace vsdr {

namespace detail {

// Little-endian primitives shared by the checkpoint and optimizer-state
// containers. Reads throw IoError on truncation.

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of file");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("unexpected end of file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

template <typename T>
void write_scalars(std::ostream& os, const T* data, size_t n) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
    std::vector<unsigned char> buf(n * sizeof(T));
    for (size_t i = 0; i < n; ++i) {
        const U u = std::bit_cast<U>(data[i]);
        for (size_t k = 0; k < sizeof(T); ++k)
            buf[i * sizeof(T) + k] = static_cast<unsigned char>(u >> (8 * k));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
void read_scalars(std::istream& is, T* data, size_t n) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
    std::vector<unsigned char> buf(n * sizeof(T));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw IoError("unexpected end of file");
    for (size_t i = 0; i < n; ++i) {
        U u = 0;
        for (size_t k = 0; k < sizeof(T); ++k)
            u |= U(buf[i * sizeof(T) + k]) << (8 * k);
        data[i] = std::bit_cast<T>(u);
    }
}

inline void write_magic(std::ostream& os, const char* magic) { os.write(magic, 5); }

inline void check_magic(std::istream& is, const char* magic, const char* what) {
    char b[5];
    if (!is.read(b, 5) || std::memcmp(b, magic, 5) != 0)
        throw IoError(std::string("not a ") + what + " file (bad magic)");
}

// One named tensor record: name, rank, extents, raw scalars.
template <typename T>
void write_entry(std::ostream& os, const std::string& name, const Shape& shape, const T* data) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(shape.size()));
    for (int64_t e : shape) write_u64(os, static_cast<uint64_t>(e));
    write_scalars(os, data, static_cast<size_t>(numel(shape)));
}

inline std::string read_entry_name(std::istream& is) {
    const uint32_t len = read_u32(is);
    if (len > 4096) throw IoError("entry name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len)) throw IoError("unexpected end of file");
    return name;
}

inline Shape read_entry_shape(std::istream& is) {
    const uint32_t rank = read_u32(is);
    if (rank < 1 || rank > 5) throw IoError("entry rank " + std::to_string(rank) + " out of range");
    Shape shape(rank);
    for (auto& e : shape) {
        const uint64_t v = read_u64(is);
        if (v < 1 || v > (uint64_t(1) << 32)) throw IoError("entry extent out of range");
        e = static_cast<int64_t>(v);
    }
    return shape;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "VSDR1";

// Writes the model configuration and every parameter and BN running buffer
// as named little-endian records. The byte stream is a pure function of the
// model state, so identical states round-trip bit-exactly.
template <typename T>
void save_checkpoint(Model<T>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    detail::write_magic(os, kCheckpointMagic);
    detail::write_u32(os, static_cast<uint32_t>(m.config.variant));
    detail::write_u32(os, static_cast<uint32_t>(m.config.base_channels));
    detail::write_u32(os, static_cast<uint32_t>(m.config.levels));
    detail::write_u32(os, static_cast<uint32_t>(m.config.input_channels));
    detail::write_u32(os, static_cast<uint32_t>(m.config.output_channels));
    detail::write_u32(os, sizeof(T));
    detail::write_u32(os, static_cast<uint32_t>(m.config.dilation_rates.size()));
    for (int64_t r : m.config.dilation_rates) detail::write_u32(os, static_cast<uint32_t>(r));

    const auto params = m.parameters();
    const auto bufs = m.buffers();
    detail::write_u64(os, params.size() + bufs.size());
    for (const auto& p : params)
        detail::write_entry(os, p.name, p.tensor.shape(), p.tensor.values().data());
    for (const auto& b : bufs)
        detail::write_entry(os, b.name, Shape{static_cast<int64_t>(b.data->size())},
                            b.data->data());
    if (!os) throw IoError("write to '" + path + "' failed");
}

// Header only: configuration plus the stored scalar width in bytes.
inline std::pair<NetworkConfig, uint32_t> read_checkpoint_header(std::istream& is) {
    detail::check_magic(is, kCheckpointMagic, "checkpoint");
    NetworkConfig c;
    const uint32_t variant = detail::read_u32(is);
    if (variant > 1) throw IoError("checkpoint: unknown variant id " + std::to_string(variant));
    c.variant = static_cast<Variant>(variant);
    c.base_channels = detail::read_u32(is);
    c.levels = detail::read_u32(is);
    c.input_channels = detail::read_u32(is);
    c.output_channels = detail::read_u32(is);
    const uint32_t width = detail::read_u32(is);
    if (width != 4 && width != 8)
        throw IoError("checkpoint: scalar width " + std::to_string(width) + " unsupported");
    const uint32_t n_rates = detail::read_u32(is);
    if (n_rates > 64) throw IoError("checkpoint: implausible dilation rate count");
    c.dilation_rates.clear();
    for (uint32_t i = 0; i < n_rates; ++i)
        c.dilation_rates.push_back(detail::read_u32(is));
    try {
        c.validate();
    } catch (const ValueError& e) {
        throw IoError(std::string("checkpoint: invalid configuration: ") + e.what());
    }
    return {c, width};
}

inline uint32_t checkpoint_scalar_width(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_checkpoint_header(is).second;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    auto [config, width] = read_checkpoint_header(is);
    if (width != sizeof(T))
        throw IoError("checkpoint stores " + std::to_string(width) + "-byte scalars, but " +
                      std::to_string(sizeof(T)) + "-byte scalars were requested");

    Model<T> m = build_model<T>(config, /*seed=*/0);
    std::unordered_map<std::string, Tensor<T>> params;
    for (auto& p : m.parameters()) params.emplace(p.name, p.tensor);
    std::unordered_map<std::string, std::vector<T>*> bufs;
    for (auto& b : m.buffers()) bufs.emplace(b.name, b.data);

    const uint64_t n_entries = detail::read_u64(is);
    if (n_entries != params.size() + bufs.size())
        throw IoError("checkpoint: expected " + std::to_string(params.size() + bufs.size()) +
                      " entries, file declares " + std::to_string(n_entries));
    std::unordered_set<std::string> seen;
    for (uint64_t i = 0; i < n_entries; ++i) {
        const std::string name = detail::read_entry_name(is);
        const Shape shape = detail::read_entry_shape(is);
        if (!seen.insert(name).second) throw IoError("checkpoint: duplicate entry '" + name + "'");
        if (auto it = params.find(name); it != params.end()) {
            if (shape != it->second.shape())
                throw IoError("checkpoint: entry '" + name + "' has shape " + shape_str(shape) +
                              ", model expects " + shape_str(it->second.shape()));
            detail::read_scalars(is, it->second.mutable_values().data(),
                                 static_cast<size_t>(it->second.numel()));
        } else if (auto bt = bufs.find(name); bt != bufs.end()) {
            if (shape != Shape{static_cast<int64_t>(bt->second->size())})
                throw IoError("checkpoint: buffer '" + name + "' has wrong extent");
            detail::read_scalars(is, bt->second->data(), bt->second->size());
        } else {
            throw IoError("checkpoint: unknown entry '" + name + "'");
        }
    }
    char extra;
    if (is.read(&extra, 1)) throw IoError("checkpoint: trailing bytes after last entry");
    return m;
}

}  // namespace vsdr
