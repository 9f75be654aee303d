#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "conjray/geodesic.hpp"

using namespace conjray;

namespace {

const Disk kUnit{{0, 0}, 1.0};

double speed_drift(const ConformalMetric& m, const GeodesicPath& p) {
    double worst = 0.0;
    for (const auto& s : p.samples) worst = std::max(worst, std::abs(m.norm(s.x, s.v) - 1.0));
    return worst;
}

}  // namespace

TEST(Shoot, EuclideanDiameter) {
    const auto m = ConformalMetric::euclidean();
    const auto p = shoot(m, kUnit, {0.0, 0.0}, 1e-3);
    EXPECT_NEAR(p.exit_time, 2.0, 1e-9);
    EXPECT_NEAR(p.back().x.x, -1.0, 1e-9);
    EXPECT_NEAR(p.back().x.y, 0.0, 1e-12);
    EXPECT_NEAR(norm(p.front().x) - 1.0, 0.0, 1e-12);
}

TEST(Shoot, EuclideanChordLength) {
    const auto m = ConformalMetric::euclidean();
    EXPECT_NEAR(shoot(m, kUnit, {0.0, kPi / 3}, 1e-3).exit_time, 1.0, 1e-8);
    for (double a : {-1.2, -0.4, 0.1, 0.9, 1.5})
        EXPECT_NEAR(shoot(m, kUnit, {0.7, a}, 1e-3).exit_time, 2.0 * std::cos(a), 1e-8);
}

TEST(Shoot, UniformStepAndRefinedExit) {
    const auto m = ConformalMetric::lens();
    const auto p = shoot(m, kUnit, {1.0, 0.3}, 1e-3);
    for (std::size_t i = 1; i + 1 < p.samples.size(); ++i)
        EXPECT_NEAR(p.samples[i].t - p.samples[i - 1].t, 1e-3, 1e-12);
    const double last = p.samples.back().t - p.samples[p.samples.size() - 2].t;
    EXPECT_GT(last, 0.0);
    EXPECT_LE(last, 1e-3 + 1e-15);
    EXPECT_NEAR(norm(p.back().x), 1.0, 1e-9);
}

TEST(Shoot, LensDiameterIsGeodesic) {
    const auto m = ConformalMetric::lens();
    const auto p = shoot(m, kUnit, {0.0, 0.0}, 1e-3);
    double closest = 1.0;
    for (const auto& s : p.samples) closest = std::min(closest, norm(s.x));
    EXPECT_LT(closest, 1e-8 + 1e-3 * 1.9);  // a node lies within one step; the path is the x-axis
    for (const auto& s : p.samples) EXPECT_NEAR(s.x.y, 0.0, 1e-12);
    EXPECT_NEAR(p.back().x.x, -1.0, 1e-6);
    EXPECT_NEAR(p.back().x.y, 0.0, 1e-6);
}

TEST(Shoot, RejectsTangentEntry) {
    const auto m = ConformalMetric::euclidean();
    EXPECT_THROW(shoot(m, kUnit, {0.0, kPi / 2}), InvalidAlpha);
    EXPECT_THROW(shoot(m, kUnit, {0.0, -kPi / 2 + 1e-7}), InvalidAlpha);
}

TEST(Shoot, TimeCapRaisesNoExit) {
    const auto m = ConformalMetric::lens();
    EXPECT_THROW(shoot(m, kUnit, {0.0, 0.2}, 1e-2, 0.5), NoExit);
}

TEST(Shoot, MinusOrientationReversesPath) {
    const auto m = ConformalMetric::lens();
    const auto plus = shoot(m, kUnit, {0.4, 0.2, Orientation::plus}, 1e-3);
    const auto minus = shoot(m, kUnit, {0.4, 0.2, Orientation::minus}, 1e-3);
    ASSERT_EQ(plus.samples.size(), minus.samples.size());
    EXPECT_NEAR(minus.front().x.x, plus.back().x.x, 1e-15);
    EXPECT_NEAR(minus.front().v.y, -plus.back().v.y, 1e-15);
    EXPECT_NEAR(minus.back().t, plus.exit_time, 1e-15);
}

TEST(ExitCoord, EuclideanGeometry) {
    const auto m = ConformalMetric::euclidean();
    auto c = exit_coord(m, kUnit, shoot(m, kUnit, {0.0, 0.0}));
    EXPECT_NEAR(c.beta, kPi, 1e-9);
    EXPECT_NEAR(c.alpha, 0.0, 1e-9);
    c = exit_coord(m, kUnit, shoot(m, kUnit, {0.0, 0.3}));
    EXPECT_NEAR(c.beta, kPi + 0.6, 1e-8);
    EXPECT_NEAR(c.alpha, -0.3, 1e-8);
}

TEST(ExitCoord, RejectsInteriorEnd) {
    const auto m = ConformalMetric::euclidean();
    auto p = shoot(m, kUnit, {0.0, 0.0});
    p.samples.pop_back();
    p.samples.pop_back();
    EXPECT_THROW(exit_coord(m, kUnit, p), NotOnBoundary);
}

TEST(ExitCoord, TimeReversalRetracesEntry) {
    const auto m = ConformalMetric::lens();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-1.4, 1.4);
    for (int i = 0; i < 20; ++i) {
        const FanBeamCoord c0{ub(rng), ua(rng)};
        const auto fwd = shoot(m, kUnit, c0, 1e-3);
        const auto back = shoot(m, kUnit, exit_coord(m, kUnit, fwd), 1e-3);
        const FanBeamCoord c1 = exit_coord(m, kUnit, back);
        EXPECT_NEAR(wrap_signed(c1.beta - c0.beta), 0.0, 1e-6);
        EXPECT_NEAR(c1.alpha, c0.alpha, 1e-6);
    }
}

TEST(Flow, UnitSpeedConservation) {
    const auto m = ConformalMetric::lens();
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-1.55, 1.55);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) worst = std::max(worst, speed_drift(m, shoot(m, kUnit, {ub(rng), ua(rng)}, 1e-3)));
    EXPECT_LT(worst, 1e-8);
}

TEST(Flow, FourthOrderConvergence) {
    const auto m = ConformalMetric::lens();
    const FanBeamCoord c{0.3, 0.25};
    // compare positions at a common arclength so that exit refinement does not pollute the rate
    auto position_at = [&](double h, double t_end) {
        FlowState s = entry_state(m, kUnit, c.beta, c.alpha);
        const int n = static_cast<int>(std::lround(t_end / h));
        m.visit([&](const auto& mm) {
            for (int i = 0; i < n; ++i) s = rk4_step<false>(mm, s, h);
        });
        return s.x;
    };
    const double T = 1.6;
    const Vec2 ref = position_at(1e-5, T);
    const double e1 = norm(position_at(0.04, T) - ref);
    const double e2 = norm(position_at(0.02, T) - ref);
    const double ratio = e1 / e2;
    EXPECT_GE(ratio, 12.0);
    EXPECT_LE(ratio, 20.0);
}

TEST(Flow, LensIsNonTrapping) {
    const auto m = ConformalMetric::lens();
    double longest = 0.0;
    m.visit([&](const auto& mm) {
        for (int ib = 0; ib < 400; ++ib)
            for (int ia = 0; ia < 100; ++ia) {
                const double beta = kTwoPi * ib / 400.0;
                const double alpha = -kPi / 2 + 0.01 + (kPi - 0.02) * ia / 99.0;
                const auto end = trace_to_exit<false>(mm, kUnit, entry_state(m, kUnit, beta, alpha), 1e-2);
                longest = std::max(longest, end.time);
            }
    });
    EXPECT_LT(longest, 10.0);
}

TEST(Transport, VerticalDiameterEntersU2AtTop) {
    const Disk u2{{0.0, 0.5}, 0.5};
    for (const auto& m : {ConformalMetric::euclidean(), ConformalMetric::lens()}) {
        const auto p = shoot(m, kUnit, {kPi / 2, 0.0}, 1e-3);
        const auto e = transport_to_subdomain(m, p, u2);
        ASSERT_TRUE(e.has_value());
        EXPECT_NEAR(e->coord.beta, kPi / 2, 1e-6);
        EXPECT_NEAR(e->coord.alpha, 0.0, 1e-6);
        EXPECT_NEAR(e->t_enter, 0.0, 1e-12);
    }
}

TEST(Transport, MissingChordGivesNone) {
    const auto m = ConformalMetric::euclidean();
    const Disk u2{{0.0, 0.5}, 0.5};
    // horizontal chord at height -0.5 entering from the right
    const double beta = -kPi / 6;  // entry point (cos, sin) = (0.866, -0.5)
    const auto p = shoot(m, kUnit, {wrap_angle(beta), -beta}, 1e-3);
    EXPECT_NEAR(p.back().x.y, -0.5, 1e-9);
    EXPECT_FALSE(transport_to_subdomain(m, p, u2).has_value());
}

TEST(Transport, EuclideanChordThroughSubdomain) {
    const auto m = ConformalMetric::euclidean();
    const Disk u2{{0.0, 0.5}, 0.5};
    // horizontal line y = 0.5 from the right: enters U2 at (0.5, 0.5) pointing -x
    const double beta = std::asin(0.5);
    const auto p = shoot(m, kUnit, {beta, -beta}, 1e-3);
    const auto e = transport_to_subdomain(m, p, u2);
    ASSERT_TRUE(e.has_value());
    EXPECT_NEAR(e->coord.beta, 0.0, 1e-9);
    EXPECT_NEAR(e->coord.alpha, 0.0, 1e-9);
    EXPECT_NEAR(e->t_enter, std::sqrt(0.75) - 0.5, 1e-9);
}

TEST(Straight, ExitMatchesIntegrator) {
    const auto m = ConformalMetric::euclidean();
    const Vec2 x{0.2, -0.3}, d = unit(1.1);
    const auto closed = straight_exit(kUnit, x, d);
    const auto num = trace_to_exit<true>(metrics::Euclidean{}, kUnit, FlowState{x, d}, 1e-3);
    EXPECT_NEAR(closed.time, num.time, 1e-9);
    EXPECT_NEAR(closed.state.b, num.state.b, 1e-9);
}
