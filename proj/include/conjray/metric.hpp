#pragma once

// Conformal metrics g_ij = c(x) * delta_ij on the plane.
//
// Every kind supplies c, its gradient and Hessian in closed form, plus the
// two quantities the geodesic and Jacobi integrators evaluate in their inner
// loops: grad(phi) and the Gauss curvature, where phi = log(c) / 2.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <variant>

#include "conjray/errors.hpp"
#include "conjray/geometry.hpp"

namespace conjray {

/// Symmetric 2x2 matrix.
struct Sym2 {
    double xx = 0.0;
    double xy = 0.0;
    double yy = 0.0;
    double trace() const { return xx + yy; }
};

namespace metrics {

struct Euclidean {
    static constexpr bool flat = true;
    double factor(Vec2) const { return 1.0; }
    Vec2 grad_factor(Vec2) const { return {}; }
    Sym2 hess_factor(Vec2) const { return {}; }
    Vec2 grad_phi(Vec2) const { return {}; }
    double laplacian_phi(Vec2) const { return 0.0; }
    double gauss(Vec2) const { return 0.0; }
};

/// c(x) = exp(k * exp(-|x - center|^2 / (2 sigma^2))).
struct Lens {
    static constexpr bool flat = false;
    double k = 1.2;
    double sigma = 0.25;
    Vec2 center{};

    double exponent(Vec2 p) const {
        const Vec2 d = p - center;
        return k * std::exp(-dot(d, d) / (2.0 * sigma * sigma));
    }
    double factor(Vec2 p) const { return std::exp(exponent(p)); }
    Vec2 grad_factor(Vec2 p) const {
        const double u = exponent(p);
        return -(std::exp(u) * u / (sigma * sigma)) * (p - center);
    }
    Sym2 hess_factor(Vec2 p) const {
        const Vec2 d = p - center;
        const double u = exponent(p);
        const double c = std::exp(u);
        const double s2 = sigma * sigma;
        const Vec2 gu = -(u / s2) * d;
        const double a = u / (s2 * s2);
        return {c * (gu.x * gu.x + a * d.x * d.x - u / s2),
                c * (gu.x * gu.y + a * d.x * d.y),
                c * (gu.y * gu.y + a * d.y * d.y - u / s2)};
    }
    Vec2 grad_phi(Vec2 p) const { return -(0.5 * exponent(p) / (sigma * sigma)) * (p - center); }
    double laplacian_phi(Vec2 p) const {
        const Vec2 d = p - center;
        const double s2 = sigma * sigma;
        return 0.5 * exponent(p) * (dot(d, d) / (s2 * s2) - 2.0 / s2);
    }
    double gauss(Vec2 p) const {
        const Vec2 d = p - center;
        const double s2 = sigma * sigma;
        const double u = exponent(p);
        return -0.5 * u * (dot(d, d) / (s2 * s2) - 2.0 / s2) * std::exp(-u);
    }
};

/// Stereographic chart of the unit sphere, c(x) = 4 / (1 + |x|^2)^2, K = 1.
struct SphereCap {
    static constexpr bool flat = false;
    double factor(Vec2 p) const {
        const double s = 1.0 + dot(p, p);
        return 4.0 / (s * s);
    }
    Vec2 grad_factor(Vec2 p) const {
        const double s = 1.0 + dot(p, p);
        return -(16.0 / (s * s * s)) * p;
    }
    Sym2 hess_factor(Vec2 p) const {
        const double s = 1.0 + dot(p, p);
        const double s3 = s * s * s;
        const double s4 = s3 * s;
        return {-16.0 / s3 + 96.0 * p.x * p.x / s4, 96.0 * p.x * p.y / s4,
                -16.0 / s3 + 96.0 * p.y * p.y / s4};
    }
    Vec2 grad_phi(Vec2 p) const { return -(2.0 / (1.0 + dot(p, p))) * p; }
    double laplacian_phi(Vec2 p) const {
        const double s = 1.0 + dot(p, p);
        return -4.0 / (s * s);
    }
    double gauss(Vec2 p) const { return -laplacian_phi(p) / factor(p); }
};

/// User-supplied closed-form factor with its derivatives.
struct Custom {
    static constexpr bool flat = false;
    std::function<double(Vec2)> c;
    std::function<Vec2(Vec2)> grad;
    std::function<Sym2(Vec2)> hess;

    double factor(Vec2 p) const { return c(p); }
    Vec2 grad_factor(Vec2 p) const { return grad(p); }
    Sym2 hess_factor(Vec2 p) const { return hess(p); }
    Vec2 grad_phi(Vec2 p) const { return (0.5 / c(p)) * grad(p); }
    double laplacian_phi(Vec2 p) const {
        const double cv = c(p);
        const Vec2 g = grad(p);
        return 0.5 * (hess(p).trace() / cv - dot(g, g) / (cv * cv));
    }
    double gauss(Vec2 p) const { return -laplacian_phi(p) / c(p); }
};

}  // namespace metrics

/// The four independent Christoffel symbols of a conformal metric; the
/// remaining ones follow from Gamma^1_22 = -Gamma^1_11, Gamma^2_22 = Gamma^1_12.
struct Christoffel {
    double g1_11 = 0.0;
    double g1_12 = 0.0;
    double g2_11 = 0.0;
    double g2_12 = 0.0;

    double g1_22() const { return -g1_11; }
    double g2_22() const { return g1_12; }
};

class ConformalMetric {
public:
    using Kind = std::variant<metrics::Euclidean, metrics::Lens, metrics::SphereCap, metrics::Custom>;

    ConformalMetric() = default;
    explicit ConformalMetric(Kind kind) : kind_(std::move(kind)) {}

    static ConformalMetric euclidean() { return ConformalMetric(metrics::Euclidean{}); }
    static ConformalMetric lens(double k = 1.2, double sigma = 0.25, Vec2 center = {}) {
        if (!(sigma > 0.0)) throw InputError("lens metric needs sigma > 0");
        return ConformalMetric(metrics::Lens{k, sigma, center});
    }
    static ConformalMetric sphere_cap() { return ConformalMetric(metrics::SphereCap{}); }
    // Two gaussian lenses, c = exp(k (G_a + G_b)); a geodesic through both
    // focuses twice, which a single lens never does.
    static ConformalMetric lens_pair(double k, double sigma, Vec2 a, Vec2 b);
    static ConformalMetric custom(metrics::Custom c) { return ConformalMetric(std::move(c)); }

    const Kind& kind() const { return kind_; }
    bool is_euclidean() const { return std::holds_alternative<metrics::Euclidean>(kind_); }

    std::string name() const {
        return std::visit(
            [](const auto& m) -> std::string {
                using M = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<M, metrics::Euclidean>) return "euclidean";
                else if constexpr (std::is_same_v<M, metrics::Lens>) return "lens";
                else if constexpr (std::is_same_v<M, metrics::SphereCap>) return "sphere_cap";
                else return "custom";
            },
            kind_);
    }

    /// Dispatches once to the concrete kind, so hot loops run on a concrete type.
    template <class Fn>
    decltype(auto) visit(Fn&& fn) const {
        return std::visit(std::forward<Fn>(fn), kind_);
    }

    double factor(Vec2 p) const { return visit([&](const auto& m) { return m.factor(p); }); }
    Vec2 grad_factor(Vec2 p) const { return visit([&](const auto& m) { return m.grad_factor(p); }); }
    Sym2 hess_factor(Vec2 p) const { return visit([&](const auto& m) { return m.hess_factor(p); }); }
    Vec2 grad_phi(Vec2 p) const { return visit([&](const auto& m) { return m.grad_phi(p); }); }
    double gauss_curvature(Vec2 p) const { return visit([&](const auto& m) { return m.gauss(p); }); }

    Christoffel christoffel(Vec2 p) const {
        const Vec2 d = grad_phi(p);
        return {d.x, d.y, -d.y, d.x};
    }

    /// |v|_g
    double norm(Vec2 p, Vec2 v) const { return std::sqrt(factor(p)) * conjray::norm(v); }
    /// |xi|_{g^*}
    double conorm(Vec2 p, CoVec2 xi) const { return std::hypot(xi.x, xi.y) / std::sqrt(factor(p)); }

    /// v_perp_i = R_ij v^j with R = sqrt(det g) [[0, 1], [-1, 0]]; a rotation by
    /// -90 degrees that also lowers the index.
    CoVec2 perp(Vec2 p, Vec2 v) const {
        const double s = factor(p);  // sqrt(det g) = c in two dimensions
        return {s * v.y, -s * v.x};
    }
    /// Inverse of perp: xi_perp^i = (R^-1)_ij xi_j, a +90 degree rotation.
    Vec2 perp_inv(Vec2 p, CoVec2 xi) const {
        const double s = factor(p);
        return {-xi.y / s, xi.x / s};
    }

    /// Euclidean components of the g-unit vector in direction angle theta.
    Vec2 unit_vector(Vec2 p, double theta) const { return (1.0 / std::sqrt(factor(p))) * unit(theta); }

private:
    Kind kind_{metrics::Euclidean{}};
};

inline ConformalMetric ConformalMetric::lens_pair(double k, double sigma, Vec2 a, Vec2 b) {
    if (!(sigma > 0.0)) throw InputError("lens metric needs sigma > 0");
    const double s2 = sigma * sigma;
    // exponent E = k (G_a + G_b) with its gradient and hessian
    auto parts = [=](Vec2 p, Vec2& grad, Sym2& hess) {
        double e = 0.0;
        for (Vec2 c : {a, b}) {
            const Vec2 d = p - c;
            const double g = k * std::exp(-dot(d, d) / (2.0 * s2));
            e += g;
            grad = grad + (-g / s2) * d;
            hess.xx += g * (d.x * d.x / (s2 * s2) - 1.0 / s2);
            hess.xy += g * d.x * d.y / (s2 * s2);
            hess.yy += g * (d.y * d.y / (s2 * s2) - 1.0 / s2);
        }
        return e;
    };
    metrics::Custom m;
    m.c = [=](Vec2 p) {
        Vec2 g{};
        Sym2 h{};
        return std::exp(parts(p, g, h));
    };
    m.grad = [=](Vec2 p) {
        Vec2 g{};
        Sym2 h{};
        const double c = std::exp(parts(p, g, h));
        return c * g;
    };
    m.hess = [=](Vec2 p) {
        Vec2 g{};
        Sym2 h{};
        const double c = std::exp(parts(p, g, h));
        return Sym2{c * (g.x * g.x + h.xx), c * (g.x * g.y + h.xy), c * (g.y * g.y + h.yy)};
    };
    return custom(std::move(m));
}

}  // namespace conjray
