#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vsdr/common.hpp"
#include "vsdr/volume.hpp"

#if defined(VSDR_HAS_ZLIB)
#include <zlib.h>
#endif

namespace vsdr {

// NRRD container subset: dimension 3, scalar types {uchar, short, ushort,
// float}, encodings {raw, gzip}, little/big endian, attached or detached
// payload. Axis convention at this boundary: NRRD lists sizes/spacings
// fastest-first (W H D); internally volumes are (D,H,W) with W fastest, so
// the listed order is reversed while the raster layout is shared verbatim.

enum class NrrdType { uchar_, short_, ushort_, float_ };
enum class NrrdEncoding { raw, gzip };

inline const char* nrrd_type_token(NrrdType t) {
    switch (t) {
        case NrrdType::uchar_: return "uchar";
        case NrrdType::short_: return "short";
        case NrrdType::ushort_: return "ushort";
        default: return "float";
    }
}

inline int64_t nrrd_scalar_width(NrrdType t) {
    switch (t) {
        case NrrdType::uchar_: return 1;
        case NrrdType::short_:
        case NrrdType::ushort_: return 2;
        default: return 4;
    }
}

struct NrrdHeader {
    int64_t dimension = 0;
    std::array<int64_t, 3> extents{};  // internal (D,H,W)
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    bool has_spacing = false;
    NrrdType type = NrrdType::float_;
    NrrdEncoding encoding = NrrdEncoding::raw;
    bool big_endian = false;
    std::string data_file;  // empty => payload attached after the header
    std::vector<std::string> warnings;

    int64_t payload_bytes() const {
        return extents[0] * extents[1] * extents[2] * nrrd_scalar_width(type);
    }
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline NrrdType parse_nrrd_type(const std::string& tok) {
    static constexpr const char* supported = "uchar, short, ushort, float";
    const std::string t = lower(tok);
    if (t == "uchar" || t == "unsigned char" || t == "uint8" || t == "uint8_t")
        return NrrdType::uchar_;
    if (t == "short" || t == "short int" || t == "signed short" || t == "signed short int" ||
        t == "int16" || t == "int16_t")
        return NrrdType::short_;
    if (t == "ushort" || t == "unsigned short" || t == "unsigned short int" || t == "uint16" ||
        t == "uint16_t")
        return NrrdType::ushort_;
    if (t == "float") return NrrdType::float_;
    throw IoError("nrrd: unsupported type '" + tok + "' (supported: " + supported + ")");
}

inline uint16_t load_u16(const unsigned char* p, bool big) {
    return big ? static_cast<uint16_t>((p[0] << 8) | p[1])
               : static_cast<uint16_t>((p[1] << 8) | p[0]);
}

inline uint32_t load_u32(const unsigned char* p, bool big) {
    return big ? (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
                     uint32_t(p[3])
               : (uint32_t(p[3]) << 24) | (uint32_t(p[2]) << 16) | (uint32_t(p[1]) << 8) |
                     uint32_t(p[0]);
}

inline void store_u16(unsigned char* p, uint16_t v, bool big) {
    if (big) {
        p[0] = static_cast<unsigned char>(v >> 8);
        p[1] = static_cast<unsigned char>(v & 0xff);
    } else {
        p[1] = static_cast<unsigned char>(v >> 8);
        p[0] = static_cast<unsigned char>(v & 0xff);
    }
}

inline void store_u32(unsigned char* p, uint32_t v, bool big) {
    if (big) {
        p[0] = static_cast<unsigned char>(v >> 24);
        p[1] = static_cast<unsigned char>((v >> 16) & 0xff);
        p[2] = static_cast<unsigned char>((v >> 8) & 0xff);
        p[3] = static_cast<unsigned char>(v & 0xff);
    } else {
        p[3] = static_cast<unsigned char>(v >> 24);
        p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
        p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
        p[0] = static_cast<unsigned char>(v & 0xff);
    }
}

#if defined(VSDR_HAS_ZLIB)
inline std::vector<unsigned char> gzip_inflate(const unsigned char* data, size_t n,
                                               size_t expected) {
    std::vector<unsigned char> out(expected);
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("nrrd: gzip initialization failed");
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(n);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const size_t produced = out.size() - zs.avail_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected)
        throw IoError("nrrd: gzip payload decodes to " + std::to_string(produced) +
                      " bytes, expected " + std::to_string(expected));
    return out;
}

inline std::vector<unsigned char> gzip_deflate(const unsigned char* data, size_t n) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) !=
        Z_OK)
        throw IoError("nrrd: gzip initialization failed");
    std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(n)));
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(n);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    out.resize(out.size() - zs.avail_out);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("nrrd: gzip compression failed");
    return out;
}
#endif

}  // namespace detail

// Parses the header section, leaving the stream positioned at the first
// payload byte (for attached data). Unknown fields are recorded as warnings
// and skipped; structural problems throw IoError.
inline NrrdHeader parse_nrrd_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("nrrd: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() < 8 || line.compare(0, 7, "NRRD000") != 0 || line[7] < '1' || line[7] > '9' ||
        line.size() != 8)
        throw IoError("nrrd: missing NRRD magic, got '" + line.substr(0, 16) + "'");

    NrrdHeader h;
    bool saw_dimension = false, saw_sizes = false, saw_type = false, saw_encoding = false,
         saw_endian = false, saw_space_directions = false;
    std::vector<int64_t> sizes;
    std::vector<double> spacings;

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) break;  // header/payload separator
        if (line[0] == '#') continue;
        if (line.find(":=") != std::string::npos) {
            h.warnings.push_back("nrrd: ignoring key-value pair '" + line + "'");
            continue;
        }
        const size_t colon = line.find(':');
        if (colon == std::string::npos)
            throw IoError("nrrd: malformed header line '" + line + "'");
        const std::string key = detail::lower(detail::trim(line.substr(0, colon)));
        const std::string value = detail::trim(line.substr(colon + 1));
        if (value.empty()) throw IoError("nrrd: field '" + key + "' has no value");

        if (key == "dimension") {
            h.dimension = detail::parse_int(value, "nrrd dimension");
            saw_dimension = true;
        } else if (key == "sizes") {
            for (const auto& tok : detail::split_ws(value))
                sizes.push_back(detail::parse_int(tok, "nrrd sizes"));
            saw_sizes = true;
        } else if (key == "type") {
            h.type = detail::parse_nrrd_type(value);
            saw_type = true;
        } else if (key == "encoding") {
            const std::string e = detail::lower(value);
            if (e == "raw")
                h.encoding = NrrdEncoding::raw;
            else if (e == "gzip" || e == "gz")
                h.encoding = NrrdEncoding::gzip;
            else
                throw IoError("nrrd: unsupported encoding '" + value +
                              "' (supported: raw, gzip)");
            saw_encoding = true;
        } else if (key == "endian") {
            const std::string e = detail::lower(value);
            if (e == "little")
                h.big_endian = false;
            else if (e == "big")
                h.big_endian = true;
            else
                throw IoError("nrrd: unknown endian '" + value + "' (expected little or big)");
            saw_endian = true;
        } else if (key == "spacings") {
            for (const auto& tok : detail::split_ws(value))
                spacings.push_back(detail::parse_double(tok, "nrrd spacings"));
        } else if (key == "space directions") {
            // Accept axis vectors "(a,b,c) (d,e,f) (g,h,i)"; spacing is the
            // Euclidean norm of each (fastest-first) vector.
            if (!spacings.empty())
                throw IoError("nrrd: both spacings and space directions present");
            std::string rest = value;
            size_t pos = 0;
            while ((pos = rest.find('(')) != std::string::npos) {
                const size_t close = rest.find(')', pos);
                if (close == std::string::npos)
                    throw IoError("nrrd: malformed space directions '" + value + "'");
                std::string triple = rest.substr(pos + 1, close - pos - 1);
                std::replace(triple.begin(), triple.end(), ',', ' ');
                const auto comps = detail::split_ws(triple);
                if (comps.size() != 3)
                    throw IoError("nrrd: malformed space directions '" + value + "'");
                double sq = 0.0;
                for (const auto& c : comps) {
                    const double x = detail::parse_double(c, "nrrd space directions");
                    sq += x * x;
                }
                spacings.push_back(std::sqrt(sq));
                rest = rest.substr(close + 1);
            }
            saw_space_directions = true;
        } else if (key == "data file" || key == "datafile") {
            h.data_file = value;
        } else {
            h.warnings.push_back("nrrd: ignoring unknown field '" + key + "'");
        }
    }

    if (!saw_dimension) throw IoError("nrrd: missing required field 'dimension'");
    if (!saw_sizes) throw IoError("nrrd: missing required field 'sizes'");
    if (!saw_type) throw IoError("nrrd: missing required field 'type'");
    if (!saw_encoding) throw IoError("nrrd: missing required field 'encoding'");
    if (h.dimension != 3)
        throw IoError("nrrd: only dimension 3 is supported, got " + std::to_string(h.dimension));
    if (static_cast<int64_t>(sizes.size()) != h.dimension)
        throw IoError("nrrd: dimension is " + std::to_string(h.dimension) + " but sizes lists " +
                      std::to_string(sizes.size()) + " extents");
    for (int64_t s : sizes)
        if (s < 1) throw IoError("nrrd: sizes must be positive");
    if (sizes[0] > (int64_t(1) << 31) || sizes[1] > (int64_t(1) << 31) ||
        sizes[2] > (int64_t(1) << 31) ||
        sizes[0] * sizes[1] * sizes[2] > (int64_t(1) << 31))
        throw IoError("nrrd: volume of " + std::to_string(sizes[0]) + "x" +
                      std::to_string(sizes[1]) + "x" + std::to_string(sizes[2]) +
                      " scalars exceeds the supported size");
    // Fastest-first (W,H,D) -> internal (D,H,W).
    h.extents = {sizes[2], sizes[1], sizes[0]};
    if (!spacings.empty()) {
        if (static_cast<int64_t>(spacings.size()) != 3)
            throw IoError("nrrd: expected 3 spacings, got " + std::to_string(spacings.size()));
        for (double s : spacings)
            if (!(s > 0.0)) throw IoError("nrrd: spacings must be positive");
        h.spacing = {spacings[2], spacings[1], spacings[0]};
        h.has_spacing = true;
    }
    if (!saw_endian && nrrd_scalar_width(h.type) > 1 && h.encoding == NrrdEncoding::raw)
        h.warnings.push_back("nrrd: no endian field for a multi-byte type; assuming little");
    (void)saw_space_directions;
    return h;
}

inline NrrdHeader parse_nrrd_header(const std::string& text) {
    std::istringstream in(text);
    return parse_nrrd_header(in);
}

namespace detail {

inline std::vector<unsigned char> read_all_bytes(std::istream& in) {
    std::vector<unsigned char> bytes;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        bytes.insert(bytes.end(), buf, buf + in.gcount());
    return bytes;
}

template <typename T>
void decode_scalars(const std::vector<unsigned char>& raw, const NrrdHeader& h,
                    std::vector<T>& out) {
    const int64_t n = h.extents[0] * h.extents[1] * h.extents[2];
    out.resize(static_cast<size_t>(n));
    const unsigned char* p = raw.data();
    switch (h.type) {
        case NrrdType::uchar_:
            for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
            break;
        case NrrdType::short_:
            for (int64_t i = 0; i < n; ++i)
                out[i] = static_cast<T>(
                    static_cast<int16_t>(load_u16(p + 2 * i, h.big_endian)));
            break;
        case NrrdType::ushort_:
            for (int64_t i = 0; i < n; ++i)
                out[i] = static_cast<T>(load_u16(p + 2 * i, h.big_endian));
            break;
        case NrrdType::float_:
            for (int64_t i = 0; i < n; ++i)
                out[i] = static_cast<T>(std::bit_cast<float>(load_u32(p + 4 * i, h.big_endian)));
            break;
    }
}

}  // namespace detail

template <typename T>
Volume<T> read_volume(const std::string& path, VolumeKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open volume file: " + path);
    const NrrdHeader h = parse_nrrd_header(in);

    std::vector<unsigned char> payload;
    if (h.data_file.empty()) {
        payload = detail::read_all_bytes(in);
    } else {
        const auto data_path = std::filesystem::path(path).parent_path() / h.data_file;
        std::ifstream din(data_path, std::ios::binary);
        if (!din) throw IoError("cannot open detached data file: " + data_path.string());
        payload = detail::read_all_bytes(din);
    }

    const int64_t expected = h.payload_bytes();
    if (h.encoding == NrrdEncoding::raw) {
        if (static_cast<int64_t>(payload.size()) != expected)
            throw IoError(path + ": raw payload holds " + std::to_string(payload.size()) +
                          " bytes, expected " + std::to_string(expected));
    } else {
#if defined(VSDR_HAS_ZLIB)
        payload = detail::gzip_inflate(payload.data(), payload.size(),
                                       static_cast<size_t>(expected));
#else
        throw IoError(path + ": gzip encoding is not supported in this build");
#endif
    }

    Volume<T> v;
    v.extents = h.extents;
    v.spacing = h.spacing;
    v.kind = kind;
    detail::decode_scalars(payload, h, v.data);
    if (kind == VolumeKind::mask) check_mask_binary(v, path.c_str());
    return v;
}

struct NrrdWriteOptions {
    NrrdType type = NrrdType::float_;
    NrrdEncoding encoding = NrrdEncoding::raw;
    bool big_endian = false;
    std::string detached_data_file;  // empty => attach payload to the header
};

template <typename T>
void write_volume(const std::string& path, const Volume<T>& v, const NrrdWriteOptions& opt = {}) {
    check_volume(v, "write_volume");
    const int64_t n = v.numel();
    const int64_t width = nrrd_scalar_width(opt.type);
    std::vector<unsigned char> payload(static_cast<size_t>(n * width));

    auto reject = [&](int64_t i, const char* range) {
        throw ValueError("write_volume: value " + std::to_string(static_cast<double>(v.data[i])) +
                         " at index " + std::to_string(i) + " is not representable as " +
                         nrrd_type_token(opt.type) + " (" + range + ")");
    };
    auto require_integer = [&](int64_t i, double lo, double hi, const char* range) {
        const double x = static_cast<double>(v.data[static_cast<size_t>(i)]);
        if (!(x >= lo && x <= hi) || x != std::rint(x)) reject(i, range);
        return static_cast<int64_t>(std::rint(x));
    };
    switch (opt.type) {
        case NrrdType::uchar_:
            for (int64_t i = 0; i < n; ++i)
                payload[i] =
                    static_cast<unsigned char>(require_integer(i, 0, 255, "integers 0..255"));
            break;
        case NrrdType::short_:
            for (int64_t i = 0; i < n; ++i)
                detail::store_u16(payload.data() + 2 * i,
                                  static_cast<uint16_t>(static_cast<int16_t>(require_integer(
                                      i, -32768, 32767, "integers -32768..32767"))),
                                  opt.big_endian);
            break;
        case NrrdType::ushort_:
            for (int64_t i = 0; i < n; ++i)
                detail::store_u16(
                    payload.data() + 2 * i,
                    static_cast<uint16_t>(require_integer(i, 0, 65535, "integers 0..65535")),
                    opt.big_endian);
            break;
        case NrrdType::float_:
            for (int64_t i = 0; i < n; ++i)
                detail::store_u32(payload.data() + 4 * i,
                                  std::bit_cast<uint32_t>(
                                      static_cast<float>(v.data[static_cast<size_t>(i)])),
                                  opt.big_endian);
            break;
    }

    if (opt.encoding == NrrdEncoding::gzip) {
#if defined(VSDR_HAS_ZLIB)
        payload = detail::gzip_deflate(payload.data(), payload.size());
#else
        throw IoError("write_volume: gzip encoding is not supported in this build");
#endif
    }

    char spac[128];
    std::snprintf(spac, sizeof(spac), "%.17g %.17g %.17g", v.spacing[2], v.spacing[1],
                  v.spacing[0]);
    std::ostringstream head;
    head << "NRRD0004\n";
    head << "type: " << nrrd_type_token(opt.type) << "\n";
    head << "dimension: 3\n";
    head << "sizes: " << v.extents[2] << " " << v.extents[1] << " " << v.extents[0] << "\n";
    head << "spacings: " << spac << "\n";
    head << "endian: " << (opt.big_endian ? "big" : "little") << "\n";
    head << "encoding: " << (opt.encoding == NrrdEncoding::raw ? "raw" : "gzip") << "\n";
    if (!opt.detached_data_file.empty()) head << "data file: " << opt.detached_data_file << "\n";
    head << "\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create volume file: " + path);
    const std::string header = head.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (opt.detached_data_file.empty()) {
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
    } else {
        const auto data_path =
            std::filesystem::path(path).parent_path() / opt.detached_data_file;
        std::ofstream dout(data_path, std::ios::binary);
        if (!dout) throw IoError("cannot create detached data file: " + data_path.string());
        dout.write(reinterpret_cast<const char*>(payload.data()),
                   static_cast<std::streamsize>(payload.size()));
        if (!dout) throw IoError("failed writing detached data file: " + data_path.string());
    }
    if (!out) throw IoError("failed writing volume file: " + path);
}

}  // namespace vsdr
