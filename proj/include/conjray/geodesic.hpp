#pragma once

// Unit-speed geodesics of a conformal metric, integrated with the classical
// fourth-order Runge-Kutta scheme at a fixed arclength step, optionally
// together with the two canonical scalar Jacobi fields.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/geometry.hpp"
#include "conjray/metric.hpp"

namespace conjray {

enum class Orientation { plus, minus };

inline const char* to_string(Orientation o) { return o == Orientation::plus ? "plus" : "minus"; }

/// Boundary chart of directed geodesics: entry angle beta on the disk and the
/// angle alpha of the initial velocity with the inner normal. With
/// Orientation::minus the coordinate names the same geodesic traversed
/// backwards, i.e. the ray that leaves the disk at beta.
struct FanBeamCoord {
    double beta = 0.0;
    double alpha = 0.0;
    Orientation orientation = Orientation::plus;
};

/// Position, velocity and the Jacobi pair (a, a', b, b') along a geodesic.
struct FlowState {
    Vec2 x{};
    Vec2 v{};
    double a = 1.0;
    double da = 0.0;
    double b = 0.0;
    double db = 1.0;
};

struct PathSample {
    double t = 0.0;
    Vec2 x{};
    Vec2 v{};
};

enum class DomainTag { M, U2 };

struct GeodesicPath {
    std::vector<PathSample> samples;
    double step = 0.0;
    double exit_time = 0.0;
    FanBeamCoord origin{};
    DomainTag domain = DomainTag::M;

    const PathSample& front() const { return samples.front(); }
    const PathSample& back() const { return samples.back(); }
};

inline constexpr double kDefaultStep = 1e-3;
inline constexpr double kDefaultTimeCap = 50.0;
inline constexpr double kAlphaGuard = 1e-6;
inline constexpr int kExitBisections = 30;

namespace detail {

struct Deriv {
    Vec2 dx, dv;
    double da, dda, db, ddb;
};

template <bool Jacobi, class M>
inline Deriv flow_rhs(const M& m, const FlowState& s) {
    Deriv d{};
    d.dx = s.v;
    if constexpr (!M::flat) {
        const Vec2 gp = m.grad_phi(s.x);
        // x'' = -Gamma(x', x') for g = exp(2 phi) delta
        d.dv = dot(s.v, s.v) * gp - (2.0 * dot(gp, s.v)) * s.v;
    } else {
        d.dv = {};
    }
    if constexpr (Jacobi) {
        double k = 0.0;
        if constexpr (!M::flat) k = m.gauss(s.x);
        d.da = s.da;
        d.dda = -k * s.a;
        d.db = s.db;
        d.ddb = -k * s.b;
    }
    return d;
}

template <bool Jacobi>
inline FlowState advance(const FlowState& s, const Deriv& d, double h) {
    FlowState r = s;
    r.x += h * d.dx;
    r.v += h * d.dv;
    if constexpr (Jacobi) {
        r.a += h * d.da;
        r.da += h * d.dda;
        r.b += h * d.db;
        r.db += h * d.ddb;
    }
    return r;
}

}  // namespace detail

/// One classical RK4 step of size h.
template <bool Jacobi, class M>
FlowState rk4_step(const M& m, const FlowState& s, double h) {
    using detail::advance;
    const auto k1 = detail::flow_rhs<Jacobi>(m, s);
    const auto k2 = detail::flow_rhs<Jacobi>(m, advance<Jacobi>(s, k1, 0.5 * h));
    const auto k3 = detail::flow_rhs<Jacobi>(m, advance<Jacobi>(s, k2, 0.5 * h));
    const auto k4 = detail::flow_rhs<Jacobi>(m, advance<Jacobi>(s, k3, h));
    FlowState r = s;
    const double w = h / 6.0;
    r.x += w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    r.v += w * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
    if constexpr (Jacobi) {
        r.a += w * (k1.da + 2.0 * k2.da + 2.0 * k3.da + k4.da);
        r.da += w * (k1.dda + 2.0 * k2.dda + 2.0 * k3.dda + k4.dda);
        r.b += w * (k1.db + 2.0 * k2.db + 2.0 * k3.db + k4.db);
        r.db += w * (k1.ddb + 2.0 * k2.ddb + 2.0 * k3.ddb + k4.ddb);
    }
    return r;
}

struct TraceEnd {
    double time = 0.0;
    FlowState state{};
};

/// Integrates from s0 until the geodesic leaves `disk`, calling
/// observe(t, state) at t = 0, at every node t = n*h and at the refined exit.
/// The exit is bracketed on the last step and refined by bisection on the
/// length of that step.
template <bool Jacobi, class M, class Observer>
TraceEnd trace_to_exit(const M& m, const Disk& disk, const FlowState& s0, double h, double time_cap,
                       Observer&& observe) {
    if (!(h > 0.0)) throw InputError("step size must be positive");
    const double r2 = disk.radius * disk.radius;
    auto outside = [&](const FlowState& s) {
        const Vec2 d = s.x - disk.center;
        return dot(d, d) > r2;
    };
    FlowState s = s0;
    double t = 0.0;
    observe(t, s);
    for (;;) {
        FlowState next = rk4_step<Jacobi>(m, s, h);
        if (outside(next)) {
            double lo = 0.0, hi = h;
            for (int i = 0; i < kExitBisections; ++i) {
                const double mid = 0.5 * (lo + hi);
                if (outside(rk4_step<Jacobi>(m, s, mid))) hi = mid;
                else lo = mid;
            }
            const double last = 0.5 * (lo + hi);
            FlowState end = rk4_step<Jacobi>(m, s, last);
            t += last;
            observe(t, end);
            return {t, end};
        }
        s = next;
        t += h;
        if (t > time_cap) throw NoExit("geodesic did not leave the domain before arclength cap");
        observe(t, s);
    }
}

template <bool Jacobi, class M>
TraceEnd trace_to_exit(const M& m, const Disk& disk, const FlowState& s0, double h,
                       double time_cap = kDefaultTimeCap) {
    return trace_to_exit<Jacobi>(m, disk, s0, h, time_cap, [](double, const FlowState&) {});
}

/// Initial state of the ray with fan-beam coordinate (beta, alpha), plus orientation.
inline FlowState entry_state(const ConformalMetric& metric, const Disk& disk, double beta, double alpha) {
    FlowState s;
    s.x = disk.boundary_point(beta);
    s.v = metric.unit_vector(s.x, beta + kPi + alpha);
    return s;
}

/// Fan-beam coordinate of the ray entering the disk at x with velocity v.
inline FanBeamCoord coord_of_entry(const Disk& disk, Vec2 x, Vec2 v) {
    const Vec2 d = x - disk.center;
    const double beta = wrap_angle(std::atan2(d.y, d.x));
    const double alpha = wrap_signed(std::atan2(v.y, v.x) - beta - kPi);
    return {beta, alpha, Orientation::plus};
}

/// Integrates the geodesic of a fan-beam coordinate and records every node.
inline GeodesicPath shoot(const ConformalMetric& metric, const Disk& disk, FanBeamCoord coord,
                          double h = kDefaultStep, double time_cap = kDefaultTimeCap,
                          DomainTag domain = DomainTag::M) {
    if (!(std::abs(coord.alpha) < kPi / 2 - kAlphaGuard))
        throw InvalidAlpha("fan-beam alpha must satisfy |alpha| < pi/2");
    GeodesicPath path;
    path.step = h;
    path.origin = coord;
    path.domain = domain;
    const FlowState s0 = entry_state(metric, disk, coord.beta, coord.alpha);
    metric.visit([&](const auto& m) {
        trace_to_exit<false>(m, disk, s0, h, time_cap, [&](double t, const FlowState& s) {
            path.samples.push_back({t, s.x, s.v});
        });
    });
    path.exit_time = path.samples.back().t;
    if (coord.orientation == Orientation::minus) {
        std::reverse(path.samples.begin(), path.samples.end());
        for (auto& p : path.samples) {
            p.t = path.exit_time - p.t;
            p.v = -p.v;
        }
    }
    return path;
}

/// Fan-beam coordinate of the path's terminal point: the entry coordinate of
/// the reversed geodesic (plus orientation).
inline FanBeamCoord exit_coord(const ConformalMetric& /*metric*/, const Disk& disk, const GeodesicPath& path) {
    const PathSample& end = path.back();
    if (std::abs(norm(end.x - disk.center) - disk.radius) > 1e-6)
        throw NotOnBoundary("terminal point of path is not on the disk boundary");
    return coord_of_entry(disk, end.x, -end.v);
}

struct SubdomainEntry {
    FanBeamCoord coord{};
    double t_enter = 0.0;
};

/// First crossing of the path into a subdomain disk, expressed in that disk's
/// fan-beam chart. Empty when the path misses the disk or grazes it.
inline std::optional<SubdomainEntry> transport_to_subdomain(const ConformalMetric& metric,
                                                            const GeodesicPath& path, const Disk& sub) {
    const auto& smp = path.samples;
    if (smp.empty()) return std::nullopt;
    auto dist = [&](Vec2 x) { return norm(x - sub.center); };
    auto make = [&](Vec2 x, Vec2 v, double t) -> std::optional<SubdomainEntry> {
        FanBeamCoord c = coord_of_entry(sub, x, v);
        if (std::abs(c.alpha) >= kPi / 2 - 1e-4) return std::nullopt;
        return SubdomainEntry{c, t};
    };
    constexpr double kOnBoundary = 1e-9;
    if (dist(smp[0].x) <= sub.radius + kOnBoundary) {
        if (smp.size() > 1 && dist(smp[1].x) < dist(smp[0].x)) return make(smp[0].x, smp[0].v, smp[0].t);
    }
    for (std::size_t i = 1; i < smp.size(); ++i) {
        if (dist(smp[i].x) >= sub.radius) continue;
        if (dist(smp[i - 1].x) < sub.radius) continue;  // started inside
        // Bracketed between nodes i-1 and i; bisect on the step length.
        const double hstep = smp[i].t - smp[i - 1].t;
        FlowState s{smp[i - 1].x, smp[i - 1].v};
        double lo = 0.0, hi = hstep;
        FlowState at{};
        metric.visit([&](const auto& m) {
            for (int it = 0; it < kExitBisections; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (dist(rk4_step<false>(m, s, mid).x) < sub.radius) hi = mid;
                else lo = mid;
            }
            at = rk4_step<false>(m, s, 0.5 * (lo + hi));
        });
        return make(at.x, at.v, smp[i - 1].t + 0.5 * (lo + hi));
    }
    return std::nullopt;
}

/// Closed-form exit of a straight ray from a disk (Euclidean fast path).
inline TraceEnd straight_exit(const Disk& disk, Vec2 x, Vec2 dir_unit) {
    const Vec2 d = x - disk.center;
    const double b = dot(d, dir_unit);
    const double c = dot(d, d) - disk.radius * disk.radius;
    const double t = -b + std::sqrt(std::max(0.0, b * b - c));
    TraceEnd e;
    e.time = t;
    e.state.x = x + t * dir_unit;
    e.state.v = dir_unit;
    e.state.a = 1.0;
    e.state.da = 0.0;
    e.state.b = t;
    e.state.db = 1.0;
    return e;
}

}  // namespace conjray
