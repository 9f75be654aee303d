#pragma once

// CRGRID v1 binary grids and sinograms, CSV dumps, 16-bit PGM images.
//
//   CRGRID v1 <kind> <n1> <n2> <o1> <o2> <s1> <s2> <orientation>\n
//   n1*n2 little-endian float64, row-major
//   [n1*n2 mask bytes when kind = sinogram-masked]
//
// kind grid: n1 = nx, n2 = ny, origin and spacing in x, y; orientation "none".
// kind sinogram: n1 = n_beta, n2 = n_alpha, o = (0, -alpha_max),
// s = (d_beta, d_alpha).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "conjray/grid.hpp"
#include "conjray/jacobi.hpp"

namespace conjray {

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_le(std::ostream& os, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    std::vector<unsigned char> bytes(v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto u = std::bit_cast<std::uint64_t>(v[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void read_le(std::istream& is, std::vector<double>& v) {
    std::vector<unsigned char> bytes(v.size() * 8);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw IOError("CRGRID: truncated value block");
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        v[i] = std::bit_cast<double>(u);
    }
}

inline std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw IOError("cannot open " + path + " for writing");
    return os;
}

inline void check_written(std::ofstream& os, const std::string& path) {
    os.flush();
    if (!os) throw IOError("write failed: " + path);
}

}  // namespace detail

struct CrgridHeader {
    std::string kind;  // grid | sinogram | sinogram-masked
    std::size_t n1 = 0, n2 = 0;
    double o1 = 0.0, o2 = 0.0, s1 = 0.0, s2 = 0.0;
    std::string orientation;  // plus | minus | none
};

inline void write_crgrid(const std::string& path, const GridFunction& g) {
    auto os = detail::open_out(path, true);
    os << "CRGRID v1 grid " << g.nx() << ' ' << g.ny() << ' ' << detail::fmt17(g.origin().x) << ' '
       << detail::fmt17(g.origin().y) << ' ' << detail::fmt17(g.spacing().x) << ' ' << detail::fmt17(g.spacing().y)
       << " none\n";
    detail::write_le(os, g.values());
    detail::check_written(os, path);
}

inline void write_crgrid(const std::string& path, const Sinogram& s) {
    auto os = detail::open_out(path, true);
    const SinogramLayout& l = s.layout();
    os << "CRGRID v1 " << (s.has_mask() ? "sinogram-masked " : "sinogram ") << l.n_beta << ' ' << l.n_alpha << " 0 "
       << detail::fmt17(-l.alpha_max()) << ' ' << detail::fmt17(l.d_beta()) << ' ' << detail::fmt17(l.d_alpha())
       << ' ' << to_string(s.orientation()) << '\n';
    detail::write_le(os, s.values());
    if (s.has_mask())
        os.write(reinterpret_cast<const char*>(s.mask().data()), static_cast<std::streamsize>(s.mask().size()));
    detail::check_written(os, path);
}

inline CrgridHeader read_crgrid_header(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw IOError("CRGRID: missing header");
    std::istringstream hs(line);
    std::string magic, version;
    CrgridHeader h;
    if (!(hs >> magic >> version >> h.kind >> h.n1 >> h.n2 >> h.o1 >> h.o2 >> h.s1 >> h.s2 >> h.orientation))
        throw IOError("CRGRID: malformed header");
    if (magic != "CRGRID" || version != "v1") throw IOError("CRGRID: not a v1 file");
    if (h.kind != "grid" && h.kind != "sinogram" && h.kind != "sinogram-masked")
        throw IOError("CRGRID: unknown kind " + h.kind);
    if (h.n1 < 2 || h.n2 < 2 || h.n1 > (1u << 24) || h.n2 > (1u << 24)) throw IOError("CRGRID: bad dimensions");
    return h;
}

inline GridFunction read_crgrid_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open " + path);
    const CrgridHeader h = read_crgrid_header(is);
    if (h.kind != "grid") throw IOError("CRGRID: " + path + " holds a " + h.kind + ", expected grid");
    GridFunction g(h.n1, h.n2, {h.o1, h.o2}, {h.s1, h.s2});
    detail::read_le(is, g.values());
    return g;
}

inline Sinogram read_crgrid_sinogram(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open " + path);
    const CrgridHeader h = read_crgrid_header(is);
    if (h.kind == "grid") throw IOError("CRGRID: " + path + " holds a grid, expected a sinogram");
    Orientation o;
    if (h.orientation == "plus") o = Orientation::plus;
    else if (h.orientation == "minus") o = Orientation::minus;
    else throw IOError("CRGRID: bad orientation " + h.orientation);
    SinogramLayout l;
    l.n_beta = h.n1;
    l.n_alpha = h.n2;
    // a guard whose alpha_max() reproduces -o2 exactly lies within a few ulps
    const double g0 = kPi / 2 + h.o2;
    l.alpha_guard = g0;
    for (double up = g0, down = g0; l.alpha_max() != -h.o2;) {
        up = std::nextafter(up, 1.0);
        down = std::nextafter(down, 0.0);
        if (up - g0 > 64 * std::numeric_limits<double>::epsilon()) throw IOError("CRGRID: inconsistent alpha origin");
        l.alpha_guard = up;
        if (l.alpha_max() == -h.o2) break;
        l.alpha_guard = down;
    }
    Sinogram s(l, o);
    detail::read_le(is, s.values());
    if (h.kind == "sinogram-masked") {
        std::vector<std::uint8_t> mask(l.size());
        if (!is.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size())))
            throw IOError("CRGRID: truncated mask block");
        s.set_mask(std::move(mask));
    }
    return s;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_csv(const std::string& path, const GridFunction& g) {
    auto os = detail::open_out(path, false);
    os << "x,y,value\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec2 p = g.node(i);
        os << detail::fmt17(p.x) << ',' << detail::fmt17(p.y) << ',' << detail::fmt17(g[i]) << '\n';
    }
    detail::check_written(os, path);
}

inline void write_csv(const std::string& path, const Sinogram& s) {
    auto os = detail::open_out(path, false);
    const SinogramLayout& l = s.layout();
    os << "beta,alpha,value,covered\n";
    for (std::size_t i = 0; i < s.size(); ++i)
        os << detail::fmt17(l.beta(i / l.n_alpha)) << ',' << detail::fmt17(l.alpha(i % l.n_alpha)) << ','
           << detail::fmt17(s[i]) << ',' << (s.has_mask() ? int(s.mask()[i]) : 1) << '\n';
    detail::check_written(os, path);
}

/// Polyline of a conjugate locus: theta, t_c, x, y, class. Undefined
/// vertices are written with empty t_c/x/y so plots break the line there.
inline void write_csv(const std::string& path, const ConjugateLocus& loc) {
    auto os = detail::open_out(path, false);
    os << "theta,t_c,x,y,class\n";
    for (const auto& v : loc.vertices) {
        os << detail::fmt17(v.theta) << ',';
        if (v.t_c)
            os << detail::fmt17(*v.t_c) << ',' << detail::fmt17(v.point.x) << ',' << detail::fmt17(v.point.y) << ','
               << (v.cls == LocusClass::cusp_candidate ? "cusp" : "fold");
        else
            os << ",,,none";
        os << '\n';
    }
    detail::check_written(os, path);
}

// ---------------------------------------------------------------------------
// PGM

struct ValueWindow {
    double lo = 0.0, hi = 0.0;
};

/// Symmetric window +-max|v|.
inline ValueWindow symmetric_window(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return {-m, m};
}

namespace detail {

inline std::uint16_t gray(double v, const ValueWindow& w) {
    if (!(w.hi > w.lo)) return 32768;
    const double t = std::clamp((v - w.lo) / (w.hi - w.lo), 0.0, 1.0);
    return static_cast<std::uint16_t>(std::lround(t * 65535.0));
}

// rows top to bottom, P5 with maxval 65535 (big-endian samples)
inline void write_p5(const std::string& path, std::size_t width, std::size_t height,
                     const std::vector<std::uint16_t>& px) {
    auto os = open_out(path, true);
    os << "P5\n" << width << ' ' << height << "\n65535\n";
    std::vector<unsigned char> bytes(px.size() * 2);
    for (std::size_t i = 0; i < px.size(); ++i) {
        bytes[2 * i] = static_cast<unsigned char>(px[i] >> 8);
        bytes[2 * i + 1] = static_cast<unsigned char>(px[i] & 0xff);
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_written(os, path);
}

inline void check_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw IOError("PGM: non-finite value");
}

}  // namespace detail

/// Image with x to the right and y up. A constant field is mid-gray.
inline void write_pgm(const std::string& path, const GridFunction& g, std::optional<ValueWindow> window = {}) {
    detail::check_finite(g.values());
    const auto [mn, mx] = std::minmax_element(g.values().begin(), g.values().end());
    const ValueWindow w = window ? *window : (*mn == *mx ? ValueWindow{} : symmetric_window(g.values()));
    std::vector<std::uint16_t> px(g.size());
    for (std::size_t row = 0; row < g.ny(); ++row)
        for (std::size_t ix = 0; ix < g.nx(); ++ix) px[row * g.nx() + ix] = detail::gray(g(ix, g.ny() - 1 - row), w);
    detail::write_p5(path, g.nx(), g.ny(), px);
}

/// Image with beta to the right and alpha up.
inline void write_pgm(const std::string& path, const Sinogram& s, std::optional<ValueWindow> window = {}) {
    detail::check_finite(s.values());
    const auto [mn, mx] = std::minmax_element(s.values().begin(), s.values().end());
    const ValueWindow w = window ? *window : (*mn == *mx ? ValueWindow{} : symmetric_window(s.values()));
    const SinogramLayout& l = s.layout();
    std::vector<std::uint16_t> px(s.size());
    for (std::size_t row = 0; row < l.n_alpha; ++row)
        for (std::size_t ib = 0; ib < l.n_beta; ++ib) px[row * l.n_beta + ib] = detail::gray(s(ib, l.n_alpha - 1 - row), w);
    detail::write_p5(path, l.n_beta, l.n_alpha, px);
}

}  // namespace conjray
