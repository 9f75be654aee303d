#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/geodesic.hpp"
#include "conjray/geometry.hpp"

namespace conjray {

/// Scalar field sampled on a uniform Cartesian grid; bilinear in between,
/// zero outside. Values are stored x-major: value(ix, iy) = data[ix * ny + iy].
class GridFunction {
public:
    GridFunction() = default;
    GridFunction(std::size_t nx, std::size_t ny, Vec2 origin, Vec2 spacing)
        : nx_(nx), ny_(ny), origin_(origin), spacing_(spacing), data_(nx * ny, 0.0) {
        if (!(spacing.x > 0.0 && spacing.y > 0.0)) throw InputError("grid spacing must be positive");
        if (nx < 2 || ny < 2) throw InputError("grid needs at least 2x2 nodes");
    }

    /// n x n grid covering [lo, hi]^2 including both ends.
    static GridFunction square(std::size_t n, double lo = -1.0, double hi = 1.0) {
        const double s = (hi - lo) / static_cast<double>(n - 1);
        return GridFunction(n, n, {lo, lo}, {s, s});
    }

    GridFunction zeros_like() const { return GridFunction(nx_, ny_, origin_, spacing_); }

    std::size_t nx() const { return nx_; }
    std::size_t ny() const { return ny_; }
    std::size_t size() const { return data_.size(); }
    Vec2 origin() const { return origin_; }
    Vec2 spacing() const { return spacing_; }
    double cell_area() const { return spacing_.x * spacing_.y; }

    double& operator()(std::size_t ix, std::size_t iy) { return data_[ix * ny_ + iy]; }
    double operator()(std::size_t ix, std::size_t iy) const { return data_[ix * ny_ + iy]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    Vec2 node(std::size_t ix, std::size_t iy) const {
        return {origin_.x + spacing_.x * static_cast<double>(ix), origin_.y + spacing_.y * static_cast<double>(iy)};
    }
    Vec2 node(std::size_t i) const { return node(i / ny_, i % ny_); }

    double eval(Vec2 p) const {
        constexpr double kEdge = 1e-6;  // exit points land a hair outside the last node
        const double mx = static_cast<double>(nx_ - 1), my = static_cast<double>(ny_ - 1);
        double fx = (p.x - origin_.x) / spacing_.x;
        double fy = (p.y - origin_.y) / spacing_.y;
        if (!(fx >= -kEdge && fy >= -kEdge && fx <= mx + kEdge && fy <= my + kEdge)) return 0.0;
        fx = std::clamp(fx, 0.0, mx);
        fy = std::clamp(fy, 0.0, my);
        const std::size_t ix = std::min(static_cast<std::size_t>(fx), nx_ - 2);
        const std::size_t iy = std::min(static_cast<std::size_t>(fy), ny_ - 2);
        const double tx = fx - static_cast<double>(ix), ty = fy - static_cast<double>(iy);
        const double* r0 = &data_[ix * ny_ + iy];
        const double* r1 = r0 + ny_;
        return (1 - tx) * ((1 - ty) * r0[0] + ty * r0[1]) + tx * ((1 - ty) * r1[0] + ty * r1[1]);
    }

    GridFunction& operator+=(const GridFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    GridFunction& operator-=(const GridFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    GridFunction& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    bool same_layout(const GridFunction& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && origin_.x == o.origin_.x && origin_.y == o.origin_.y &&
               spacing_.x == o.spacing_.x && spacing_.y == o.spacing_.y;
    }

private:
    void check_same(const GridFunction& o) const {
        if (!same_layout(o)) throw InputError("grid layouts differ");
    }

    std::size_t nx_ = 0, ny_ = 0;
    Vec2 origin_{}, spacing_{1.0, 1.0};
    std::vector<double> data_;
};

inline GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
inline GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
inline GridFunction operator*(double s, GridFunction a) { return a *= s; }

/// Fan-beam sampling of the ray manifold of a disk. Angles are node-centred:
/// beta_i = 2 pi i / n_beta and alpha_j spans [-pi/2 + guard, pi/2 - guard]
/// with both ends included.
struct SinogramLayout {
    std::size_t n_beta = 360;
    std::size_t n_alpha = 180;
    double alpha_guard = 0.01;

    double d_beta() const { return kTwoPi / static_cast<double>(n_beta); }
    double alpha_max() const { return kPi / 2 - alpha_guard; }
    double d_alpha() const { return 2.0 * alpha_max() / static_cast<double>(n_alpha - 1); }
    double beta(std::size_t i) const { return d_beta() * static_cast<double>(i); }
    double alpha(std::size_t j) const { return -alpha_max() + d_alpha() * static_cast<double>(j); }
    std::size_t size() const { return n_beta * n_alpha; }
    // same sample positions; guards differing below the resolution of
    // alpha_max() compare equal
    bool operator==(const SinogramLayout& o) const {
        return n_beta == o.n_beta && n_alpha == o.n_alpha && alpha_max() == o.alpha_max();
    }
};

/// Values over a SinogramLayout; value(ib, ia) = data[ib * n_alpha + ia].
/// An empty mask means full coverage; a masked-out cell always holds 0.
class Sinogram {
public:
    Sinogram() = default;
    explicit Sinogram(SinogramLayout layout, Orientation o = Orientation::plus)
        : layout_(layout), orientation_(o), data_(layout.size(), 0.0) {
        if (layout.n_beta < 2 || layout.n_alpha < 2) throw InputError("sinogram needs at least 2x2 cells");
        if (!(layout.alpha_guard > 0.0 && layout.alpha_guard < kPi / 2)) throw InputError("bad alpha guard");
    }

    const SinogramLayout& layout() const { return layout_; }
    Orientation orientation() const { return orientation_; }
    void set_orientation(Orientation o) { orientation_ = o; }
    std::size_t n_beta() const { return layout_.n_beta; }
    std::size_t n_alpha() const { return layout_.n_alpha; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t ib, std::size_t ia) { return data_[ib * layout_.n_alpha + ia]; }
    double operator()(std::size_t ib, std::size_t ia) const { return data_[ib * layout_.n_alpha + ia]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool has_mask() const { return !mask_.empty(); }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    bool covered(std::size_t i) const { return mask_.empty() || mask_[i] != 0; }
    void set_mask(std::vector<std::uint8_t> m) {
        if (!m.empty() && m.size() != data_.size()) throw InputError("mask size mismatch");
        mask_ = std::move(m);
        apply_mask();
    }
    void apply_mask() {
        if (mask_.empty()) return;
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (!mask_[i]) data_[i] = 0.0;
    }
    double coverage() const {
        if (mask_.empty()) return 1.0;
        return static_cast<double>(std::accumulate(mask_.begin(), mask_.end(), std::size_t{0})) /
               static_cast<double>(mask_.size());
    }

    /// Bilinear, periodic in beta, zero outside the alpha range.
    double eval(double beta, double alpha) const {
        const double fa = (alpha + layout_.alpha_max()) / layout_.d_alpha();
        if (!(fa >= 0.0) || fa > static_cast<double>(layout_.n_alpha - 1)) return 0.0;
        auto ia = static_cast<std::size_t>(fa);
        if (ia + 1 >= layout_.n_alpha) ia = layout_.n_alpha - 2;
        const double ta = fa - static_cast<double>(ia);
        double fb = wrap_angle(beta) / layout_.d_beta();
        auto ib = static_cast<std::size_t>(fb);
        if (ib >= layout_.n_beta) ib = 0, fb = 0.0;
        const double tb = fb - static_cast<double>(ib);
        const std::size_t ib1 = (ib + 1) % layout_.n_beta;
        const double v0 = (1 - ta) * (*this)(ib, ia) + ta * (*this)(ib, ia + 1);
        const double v1 = (1 - ta) * (*this)(ib1, ia) + ta * (*this)(ib1, ia + 1);
        return (1 - tb) * v0 + tb * v1;
    }

    Sinogram& operator+=(const Sinogram& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Sinogram& operator-=(const Sinogram& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Sinogram& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

private:
    void check_same(const Sinogram& o) const {
        if (!(layout_ == o.layout_)) throw InputError("sinogram layouts differ");
    }

    SinogramLayout layout_{};
    Orientation orientation_ = Orientation::plus;
    std::vector<double> data_;
    std::vector<std::uint8_t> mask_;
};

inline Sinogram operator+(Sinogram a, const Sinogram& b) { return a += b; }
inline Sinogram operator-(Sinogram a, const Sinogram& b) { return a -= b; }
inline Sinogram operator*(double s, Sinogram a) { return a *= s; }

/// Plain Euclidean L2 norm of the stored values.
template <class Field>
double l2_norm(const Field& f) {
    double s = 0.0;
    for (double v : f.values()) s += v * v;
    return std::sqrt(s);
}

}  // namespace conjray
