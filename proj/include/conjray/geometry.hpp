#pragma once

#include <cmath>
#include <numbers>

namespace conjray {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Tangent vector (index up), Euclidean chart components.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
    constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
};

constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Cotangent vector (index down). Kept distinct from Vec2 so that the
/// metric has to be involved whenever one is turned into the other.
struct CoVec2 {
    double x = 0.0;
    double y = 0.0;
};

constexpr CoVec2 operator*(double s, CoVec2 a) { return {s * a.x, s * a.y}; }
constexpr double pairing(CoVec2 xi, Vec2 v) { return xi.x * v.x + xi.y * v.y; }

/// Closed disk in the Euclidean chart.
struct Disk {
    Vec2 center{};
    double radius = 1.0;

    bool contains(Vec2 p, double slack = 0.0) const {
        return norm(p - center) <= radius + slack;
    }
    Vec2 boundary_point(double beta) const { return center + radius * unit(beta); }
};

/// Wraps an angle into [0, 2pi).
inline double wrap_angle(double a) {
    a = std::fmod(a, kTwoPi);
    if (a < 0.0) a += kTwoPi;
    if (a >= kTwoPi) a -= kTwoPi;
    return a;
}

/// Wraps an angle into (-pi, pi].
inline double wrap_signed(double a) {
    a = wrap_angle(a);
    return a > kPi ? a - kTwoPi : a;
}

}  // namespace conjray
