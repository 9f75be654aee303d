#pragma once

// Scalar Jacobi fields along geodesics, conjugate times, the canonical map
// sending conormals to boundary data, the map pairing conjugate conormals and
// the first conjugate locus of a point.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/geodesic.hpp"
#include "conjray/metric.hpp"
#include "conjray/parallel.hpp"

namespace conjray {

/// Two solutions of a'' + K a = 0 along a path, with (a, a', b, b')(0) = (1, 0, 0, 1).
struct ScalarJacobiPair {
    std::vector<double> t, a, da, b, db;
    std::vector<double> curvature;  // K(gamma(t)) at the nodes

    std::size_t size() const { return t.size(); }
    double wronskian(std::size_t i) const { return a[i] * db[i] - da[i] * b[i]; }

    struct Value {
        double a, da, b, db;
    };

    /// Cubic Hermite interpolation between nodes; a' and b' use a'' = -K a.
    Value at(double tq) const {
        const std::size_t i = segment(tq);
        const double t0 = t[i], t1 = t[i + 1];
        const double hs = t1 - t0;
        const double s = hs > 0.0 ? (tq - t0) / hs : 0.0;
        auto herm = [&](double y0, double d0, double y1, double d1) {
            const double s2 = s * s, s3 = s2 * s;
            return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * hs * d0 + (-2 * s3 + 3 * s2) * y1 +
                   (s3 - s2) * hs * d1;
        };
        const double k0 = curvature[i], k1 = curvature[i + 1];
        return {herm(a[i], da[i], a[i + 1], da[i + 1]), herm(da[i], -k0 * a[i], da[i + 1], -k1 * a[i + 1]),
                herm(b[i], db[i], b[i + 1], db[i + 1]), herm(db[i], -k0 * b[i], db[i + 1], -k1 * b[i + 1])};
    }

    std::size_t segment(double tq) const {
        if (t.size() < 2) throw InputError("Jacobi pair needs at least two nodes");
        auto it = std::upper_bound(t.begin(), t.end(), tq);
        std::size_t i = it == t.begin() ? 0 : static_cast<std::size_t>(it - t.begin()) - 1;
        return std::min(i, t.size() - 2);
    }
};

/// Integrates the Jacobi pair along the nodes of `path`. The geodesic state is
/// reset to the recorded node at each step so the samples stay aligned.
inline ScalarJacobiPair integrate_jacobi(const ConformalMetric& metric, const GeodesicPath& path) {
    ScalarJacobiPair pair;
    const auto& smp = path.samples;
    const std::size_t n = smp.size();
    pair.t.resize(n);
    pair.a.resize(n);
    pair.da.resize(n);
    pair.b.resize(n);
    pair.db.resize(n);
    pair.curvature.resize(n);
    metric.visit([&](const auto& m) {
        FlowState s;
        s.a = 1.0;
        s.da = 0.0;
        s.b = 0.0;
        s.db = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            pair.t[i] = smp[i].t;
            pair.a[i] = s.a;
            pair.da[i] = s.da;
            pair.b[i] = s.b;
            pair.db[i] = s.db;
            pair.curvature[i] = m.gauss(smp[i].x);
            if (i + 1 == n) break;
            s.x = smp[i].x;
            s.v = smp[i].v;
            s = rk4_step<true>(m, s, smp[i + 1].t - smp[i].t);
        }
    });
    return pair;
}

namespace detail {

/// c(t) = a(t1) b(t) - b(t1) a(t), the Jacobi field vanishing at t1.
struct PinnedField {
    double a1, b1;
    double value(const ScalarJacobiPair::Value& v) const { return a1 * v.b - b1 * v.a; }
    double slope(const ScalarJacobiPair::Value& v) const { return a1 * v.db - b1 * v.da; }
    double node(const ScalarJacobiPair& p, std::size_t i) const { return a1 * p.b[i] - b1 * p.a[i]; }
};

inline double refine_root(const ScalarJacobiPair& pair, const PinnedField& c, double lo, double hi) {
    double flo = c.value(pair.at(lo));
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = c.value(pair.at(mid));
        if (std::abs(fm) < 1e-10 && hi - lo < 1e-9) return mid;
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-15) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// All zeros of c(t) = a(t1) b(t) - b(t1) a(t) on the path except t1 itself.
inline std::vector<double> conjugate_times(const ScalarJacobiPair& pair, double t1) {
    std::vector<double> roots;
    if (pair.size() < 2) return roots;
    const double h = pair.t.size() > 2 ? pair.t[2] - pair.t[1] : pair.t[1] - pair.t[0];
    const auto v1 = pair.at(t1);
    const detail::PinnedField c{v1.a, v1.b};
    const double guard = 2.0 * std::abs(h);
    for (std::size_t i = 0; i + 1 < pair.size(); ++i) {
        const double ta = pair.t[i], tb = pair.t[i + 1];
        if (tb > t1 - guard && ta < t1 + guard) continue;
        const double fa = c.node(pair, i), fb = c.node(pair, i + 1);
        if (fa == 0.0) {
            if (std::abs(ta - t1) >= guard) roots.push_back(ta);
            continue;
        }
        if ((fa < 0.0) != (fb < 0.0) && fb != 0.0) roots.push_back(detail::refine_root(pair, c, ta, tb));
    }
    const double tl = pair.t.back();
    if (c.node(pair, pair.size() - 1) == 0.0 && std::abs(tl - t1) >= guard) roots.push_back(tl);
    return roots;
}

/// Position and velocity on a path at arclength t (cubic Hermite in x).
inline PathSample sample_path(const GeodesicPath& path, double tq) {
    const auto& s = path.samples;
    auto it = std::upper_bound(s.begin(), s.end(), tq, [](double v, const PathSample& p) { return v < p.t; });
    std::size_t i = it == s.begin() ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
    i = std::min(i, s.size() - 2);
    const double hs = s[i + 1].t - s[i].t;
    const double u = hs > 0 ? (tq - s[i].t) / hs : 0.0;
    const double u2 = u * u, u3 = u2 * u;
    const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u, h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
    PathSample out;
    out.t = tq;
    out.x = h00 * s[i].x + (h10 * hs) * s[i].v + h01 * s[i + 1].x + (h11 * hs) * s[i + 1].v;
    out.v = (1 - u) * s[i].v + u * s[i + 1].v;
    return out;
}

struct ConjugateEvent {
    double t1 = 0.0, t2 = 0.0;
    Vec2 p1{}, p2{};
    Vec2 v1{}, v2{};
    double cprime1 = 0.0, cprime2 = 0.0;
    int m = 0;
    int epsilon = 1;

    /// lambda_2 / lambda_1 for covectors paired across the event.
    double lambda_ratio() const { return cprime2 / cprime1; }
};

inline ConjugateEvent conjugate_event(const ConformalMetric& metric, const GeodesicPath& path,
                                      const ScalarJacobiPair& pair, double t1, double t2) {
    const auto v1 = pair.at(t1);
    const auto v2 = pair.at(t2);
    const detail::PinnedField c{v1.a, v1.b};
    ConjugateEvent e;
    e.t1 = t1;
    e.t2 = t2;
    const PathSample s1 = sample_path(path, t1), s2 = sample_path(path, t2);
    e.p1 = s1.x;
    e.p2 = s2.x;
    e.v1 = (1.0 / metric.norm(s1.x, s1.v)) * s1.v;
    e.v2 = (1.0 / metric.norm(s2.x, s2.v)) * s2.v;
    e.cprime1 = c.slope(v1);
    e.cprime2 = c.slope(v2);
    if (std::abs(e.cprime2) < 1e-10) throw DegenerateZero("conjugate zero of c is not simple");
    const double lo = std::min(t1, t2), hi = std::max(t1, t2);
    for (double t : conjugate_times(pair, t1))
        if (t > lo + 1e-9 && t < hi - 1e-9) ++e.m;
    e.epsilon = (e.m % 2 == 0) ? 1 : -1;
    return e;
}

struct CanonicalPoint {
    double beta = 0.0;
    double alpha = 0.0;
    double y_hat = 0.0;
    double eta_hat = 0.0;
    Orientation orientation = Orientation::plus;
};

/// Boundary chart image of the conormal lambda * gamma'(t)^perp.
inline CanonicalPoint canonical_map(const GeodesicPath& path, const ScalarJacobiPair& pair, double t,
                                    double lambda) {
    if (lambda == 0.0) throw InputError("canonical_map needs lambda != 0");
    const auto v = pair.at(t);
    return {path.origin.beta, path.origin.alpha, lambda * v.a, lambda * v.b,
            lambda > 0 ? Orientation::plus : Orientation::minus};
}

struct ConjugateConormal {
    Vec2 p2{};
    CoVec2 xi2{};
    ConjugateEvent event{};
};

/// The geodesic through p1 conormal to xi1, as a path entering `disk`, and the
/// arclength at which it passes p1.
struct NormalGeodesic {
    GeodesicPath path;
    double t1 = 0.0;
};

inline NormalGeodesic normal_geodesic(const ConformalMetric& metric, const Disk& disk, Vec2 p1, CoVec2 xi1,
                                      double h) {
    const double len = metric.conorm(p1, xi1);
    if (!(len > 0.0)) throw InputError("covector must be nonzero");
    const Vec2 v1 = metric.perp_inv(p1, (1.0 / len) * xi1);
    FlowState s{p1, -v1};
    const TraceEnd back = metric.visit([&](const auto& m) { return trace_to_exit<false>(m, disk, s, h); });
    const FanBeamCoord entry = coord_of_entry(disk, back.state.x, -back.state.v);
    NormalGeodesic ng;
    ng.path = shoot(metric, disk, entry, h);
    ng.t1 = back.time;
    return ng;
}

/// Conormals (p2, xi2) paired with (p1, xi1) through conjugate points along
/// the geodesic normal to xi1, one per conjugate time inside the disk.
inline std::vector<ConjugateConormal> c21_map(const ConformalMetric& metric, const Disk& disk, Vec2 p1,
                                              CoVec2 xi1, double h = kDefaultStep) {
    std::vector<ConjugateConormal> out;
    if (metric.is_euclidean()) return out;
    const NormalGeodesic ng = normal_geodesic(metric, disk, p1, xi1, h);
    const ScalarJacobiPair pair = integrate_jacobi(metric, ng.path);
    const double lambda1 = metric.conorm(p1, xi1);
    for (double t2 : conjugate_times(pair, ng.t1)) {
        ConjugateEvent ev = conjugate_event(metric, ng.path, pair, ng.t1, t2);
        const double lambda2 = lambda1 * ev.lambda_ratio();
        const PathSample s2 = sample_path(ng.path, t2);
        const Vec2 u2 = (1.0 / metric.norm(s2.x, s2.v)) * s2.v;
        out.push_back({s2.x, lambda2 * metric.perp(s2.x, u2), ev});
    }
    return out;
}

enum class LocusClass { fold, cusp_candidate };

struct LocusVertex {
    double theta = 0.0;
    std::optional<double> t_c;
    Vec2 point{};
    LocusClass cls = LocusClass::fold;
    double tangent = 0.0;  // |d/dtheta exp_p(t_c(theta) theta)|
};

struct ConjugateLocus {
    Vec2 base{};
    std::vector<LocusVertex> vertices;

    std::size_t defined_count() const {
        return static_cast<std::size_t>(std::count_if(vertices.begin(), vertices.end(),
                                                      [](const LocusVertex& v) { return v.t_c.has_value(); }));
    }
    std::size_t cusp_count() const {
        return static_cast<std::size_t>(std::count_if(vertices.begin(), vertices.end(), [](const LocusVertex& v) {
            return v.t_c && v.cls == LocusClass::cusp_candidate;
        }));
    }
};

inline constexpr double kCuspTolerance = 0.05;

namespace detail {

/// First zero of b along the geodesic from (p, v), before leaving the disk.
template <class M>
std::optional<std::pair<double, Vec2>> first_conjugate(const M& m, const Disk& disk, Vec2 p, Vec2 v, double h) {
    FlowState s{p, v, 1.0, 0.0, 0.0, 1.0};
    const double r2 = disk.radius * disk.radius;
    double t = 0.0;
    const double guard = 2.0 * h;
    for (;;) {
        FlowState next = rk4_step<true>(m, s, h);
        const Vec2 d = next.x - disk.center;
        if (dot(d, d) > r2) return std::nullopt;
        if (t + h > guard && (next.b < 0.0) != (s.b < 0.0) && s.b != 0.0) {
            double lo = 0.0, hi = h;
            for (int it = 0; it < 50; ++it) {
                const double mid = 0.5 * (lo + hi);
                const FlowState q = rk4_step<true>(m, s, mid);
                if ((q.b < 0.0) == (s.b < 0.0)) lo = mid;
                else hi = mid;
            }
            const double st = 0.5 * (lo + hi);
            return std::make_pair(t + st, rk4_step<true>(m, s, st).x);
        }
        s = next;
        t += h;
        if (t > kDefaultTimeCap) throw NoExit("geodesic did not leave the domain");
    }
}

}  // namespace detail

/// First conjugate locus of p. Vertices are classified by the size of the
/// numerical tangent of theta -> exp_p(t_c(theta) theta): a run of vertices
/// below kCuspTolerance * max|T| is one cusp, tagged at its smallest vertex.
inline ConjugateLocus conjugate_locus(const ConformalMetric& metric, const Disk& disk, Vec2 p, int n_dirs,
                                      double h = 2e-3, double tol_cusp = kCuspTolerance) {
    if (n_dirs < 16) throw InputError("conjugate_locus needs at least 16 directions");
    if (!disk.contains(p)) throw InputError("locus base point must lie inside the domain");
    ConjugateLocus locus;
    locus.base = p;
    locus.vertices.resize(static_cast<std::size_t>(n_dirs));
    const double dtheta = kTwoPi / n_dirs;
    metric.visit([&](const auto& m) {
        parallel_for(static_cast<std::size_t>(n_dirs), [&](std::size_t j) {
            auto& vx = locus.vertices[j];
            vx.theta = dtheta * static_cast<double>(j);
            if (metric.is_euclidean()) return;
            const Vec2 v = metric.unit_vector(p, vx.theta);
            if (auto hit = detail::first_conjugate(m, disk, p, v, h)) {
                vx.t_c = hit->first;
                vx.point = hit->second;
            }
        });
    });
    const std::size_t n = locus.vertices.size();
    auto& V = locus.vertices;
    double tmax = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!V[j].t_c) continue;
        const std::size_t jp = (j + 1) % n, jm = (j + n - 1) % n;
        const bool hp = V[jp].t_c.has_value(), hm = V[jm].t_c.has_value();
        Vec2 d{};
        if (hp && hm) d = (0.5 / dtheta) * (V[jp].point - V[jm].point);
        else if (hp) d = (1.0 / dtheta) * (V[jp].point - V[j].point);
        else if (hm) d = (1.0 / dtheta) * (V[j].point - V[jm].point);
        V[j].tangent = norm(d);
        tmax = std::max(tmax, V[j].tangent);
    }
    // Runs of small-tangent vertices collapse to one cusp at the minimum.
    // Endpoints of a branch only have one-sided tangents and are never cusps.
    std::vector<bool> small(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const bool interior = V[(j + 1) % n].t_c && V[(j + n - 1) % n].t_c;
        small[j] = V[j].t_c && interior && V[j].tangent < tol_cusp * tmax;
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (!small[j] || small[(j + n - 1) % n]) continue;
        std::size_t best = j;
        for (std::size_t k = j; small[k % n]; ++k) {
            if (V[k % n].tangent < V[best].tangent) best = k % n;
            if (k - j > n) break;
        }
        V[best].cls = LocusClass::cusp_candidate;
    }
    return locus;
}

}  // namespace conjray
