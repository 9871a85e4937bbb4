#pragma once

#include <cctype>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsdr {

// Error hierarchy. The CLI maps these onto exit codes: IoError and
// ValueError are data errors (2), NumericError is a numerical failure (3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

// Extents of a dense array, outermost first. Rank-5 tensors follow the
// [batch, channel, depth, height, width] convention.
using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check_shape_valid(const Shape& s, const char* what) {
    if (s.empty() || s.size() > 5)
        throw ShapeError(std::string(what) + ": rank must be 1..5, got " + shape_str(s));
    for (int64_t e : s)
        if (e < 1) throw ShapeError(std::string(what) + ": non-positive extent in " + shape_str(s));
}

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline int64_t parse_int(const std::string& s, const std::string& what) {
    size_t pos = 0;
    int64_t v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw ValueError(what + ": not an integer: '" + s + "'");
    }
    if (pos != s.size()) throw ValueError(what + ": not an integer: '" + s + "'");
    return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ValueError(what + ": not a number: '" + s + "'");
    }
    if (pos != s.size()) throw ValueError(what + ": not a number: '" + s + "'");
    return v;
}

}  // namespace detail

}  // namespace vsdr
