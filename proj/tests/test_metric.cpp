#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "conjray/metric.hpp"

using namespace conjray;

namespace {

Vec2 random_point(std::mt19937_64& rng, double lo = -1.5, double hi = 1.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    return {u(rng), u(rng)};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Metric, EuclideanIsFlat) {
    const auto m = ConformalMetric::euclidean();
    const Vec2 p{0.3, -0.7};
    EXPECT_EQ(m.factor(p), 1.0);
    const Christoffel g = m.christoffel(p);
    EXPECT_EQ(g.g1_11, 0.0);
    EXPECT_EQ(g.g1_12, 0.0);
    EXPECT_EQ(g.g2_11, 0.0);
    EXPECT_EQ(g.g2_12, 0.0);
    EXPECT_EQ(m.gauss_curvature(p), 0.0);
}

TEST(Metric, LensCenterValues) {
    const auto m = ConformalMetric::lens();
    EXPECT_NEAR(m.factor({0, 0}), std::exp(1.2), 1e-14);
    const Christoffel g = m.christoffel({0, 0});
    EXPECT_EQ(g.g1_11, 0.0);
    EXPECT_EQ(g.g2_12, 0.0);
    // K(0) = k e^{-k} / sigma^2
    EXPECT_NEAR(m.gauss_curvature({0, 0}), 1.2 * std::exp(-1.2) / 0.0625, 1e-12);
    EXPECT_NEAR(m.gauss_curvature({0, 0}), 5.78293, 1e-5);
}

TEST(Metric, LensChristoffelOffCenter) {
    const auto m = ConformalMetric::lens();
    const Christoffel g = m.christoffel({0.25, 0.0});
    EXPECT_NEAR(g.g1_11, -2.4 * std::exp(-0.5), 1e-12);
    EXPECT_NEAR(g.g1_11, -1.455674, 1e-6);  // -2.4 e^{-1/2}
    EXPECT_EQ(g.g1_22(), -g.g1_11);
    EXPECT_EQ(g.g2_22(), g.g1_12);
    EXPECT_NEAR(g.g2_12, g.g1_11, 0.0);
}

TEST(Metric, TranslatedLensCenter) {
    const auto m = ConformalMetric::lens(1.2, 0.25, {0.2, 0.0});
    EXPECT_NEAR(m.factor({0.2, 0.0}), std::exp(1.2), 1e-14);
    EXPECT_NEAR(norm(m.grad_factor({0.2, 0.0})), 0.0, 1e-15);
}

TEST(Metric, FactorPositiveOnBox) {
    std::mt19937_64 rng(7);
    for (const auto& m : {ConformalMetric::lens(), ConformalMetric::sphere_cap(), ConformalMetric::euclidean()})
        for (int i = 0; i < 1000; ++i) EXPECT_GT(m.factor(random_point(rng)), 0.0);
}

TEST(Metric, DerivativesMatchCentralDifferences) {
    std::mt19937_64 rng(11);
    const double h = 1e-4;
    for (const auto& m : {ConformalMetric::lens(), ConformalMetric::sphere_cap(),
                          ConformalMetric::lens(-0.8, 0.4, {0.1, -0.2})}) {
        for (int i = 0; i < 100; ++i) {
            const Vec2 p = random_point(rng, -1.0, 1.0);
            const Vec2 ex{h, 0}, ey{0, h};
            const Vec2 g = m.grad_factor(p);
            const double scale_g = std::max(1e-3, norm(g));
            EXPECT_LT(std::abs(g.x - (m.factor(p + ex) - m.factor(p - ex)) / (2 * h)) / scale_g, 1e-6);
            EXPECT_LT(std::abs(g.y - (m.factor(p + ey) - m.factor(p - ey)) / (2 * h)) / scale_g, 1e-6);
            const Sym2 H = m.hess_factor(p);
            const Vec2 gxp = m.grad_factor(p + ex), gxm = m.grad_factor(p - ex);
            const Vec2 gyp = m.grad_factor(p + ey), gym = m.grad_factor(p - ey);
            const double scale_h = std::max({1e-3, std::abs(H.xx), std::abs(H.xy), std::abs(H.yy)});
            EXPECT_LT(std::abs(H.xx - (gxp.x - gxm.x) / (2 * h)) / scale_h, 1e-6);
            EXPECT_LT(std::abs(H.xy - (gxp.y - gxm.y) / (2 * h)) / scale_h, 1e-6);
            EXPECT_LT(std::abs(H.yy - (gyp.y - gym.y) / (2 * h)) / scale_h, 1e-6);
        }
    }
}

TEST(Metric, GaussCurvatureFromHessianAgrees) {
    // K = -Delta(phi)/c with Delta(log c) = tr(H)/c - |grad c|^2/c^2.
    std::mt19937_64 rng(3);
    const auto m = ConformalMetric::lens(1.2, 0.25, {0.2, 0.0});
    for (int i = 0; i < 200; ++i) {
        const Vec2 p = random_point(rng, -1.0, 1.0);
        const double c = m.factor(p);
        const Vec2 g = m.grad_factor(p);
        const double lap_phi = 0.5 * (m.hess_factor(p).trace() / c - dot(g, g) / (c * c));
        EXPECT_LT(rel(m.gauss_curvature(p), -lap_phi / c), 1e-12);
    }
}

TEST(Metric, SphereCapHasUnitCurvature) {
    const auto m = ConformalMetric::sphere_cap();
    EXPECT_NEAR(m.gauss_curvature({0.3, -0.4}), 1.0, 1e-9);
    std::mt19937_64 rng(5);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) worst = std::max(worst, std::abs(m.gauss_curvature(random_point(rng)) - 1.0));
    EXPECT_LT(worst, 1e-9);
}

TEST(Metric, CustomMatchesBuiltinLens) {
    const metrics::Lens lens{};
    metrics::Custom cm{[lens](Vec2 p) { return lens.factor(p); }, [lens](Vec2 p) { return lens.grad_factor(p); },
                       [lens](Vec2 p) { return lens.hess_factor(p); }};
    const auto custom = ConformalMetric::custom(cm);
    const auto builtin = ConformalMetric(lens);
    for (Vec2 p : {Vec2{0.1, 0.2}, Vec2{-0.4, 0.3}, Vec2{0.7, -0.1}}) {
        EXPECT_LT(rel(custom.gauss_curvature(p), builtin.gauss_curvature(p)), 1e-12);
        EXPECT_NEAR(custom.grad_phi(p).x, builtin.grad_phi(p).x, 1e-12);
    }
    EXPECT_EQ(custom.name(), "custom");
}

// R = sqrt(det g) [[0, 1], [-1, 0]] applied to v.
TEST(Metric, PerpConvention) {
    const auto e = ConformalMetric::euclidean();
    CoVec2 xi = e.perp({0, 0}, {1, 0});
    EXPECT_EQ(xi.x, 0.0);
    EXPECT_EQ(xi.y, -1.0);
    xi = e.perp({0, 0}, {0, 1});
    EXPECT_EQ(xi.x, 1.0);
    EXPECT_EQ(xi.y, 0.0);
    const auto lens = ConformalMetric::lens();
    xi = lens.perp({0, 0}, {1, 0});
    EXPECT_NEAR(xi.x, 0.0, 0.0);
    EXPECT_NEAR(std::abs(xi.y), std::exp(1.2), 1e-12);
}

TEST(Metric, PerpProperties) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto m = ConformalMetric::lens();
    for (int i = 0; i < 500; ++i) {
        const Vec2 p = random_point(rng, -1.0, 1.0);
        const Vec2 v{n(rng), n(rng)};
        const CoVec2 xi = m.perp(p, v);
        EXPECT_LT(std::abs(pairing(xi, v)), 1e-12 * m.factor(p) * dot(v, v) + 1e-15);
        EXPECT_LT(std::abs(m.conorm(p, xi) - m.norm(p, v)), 1e-12 * std::max(1.0, m.norm(p, v)));
        const Vec2 back = m.perp_inv(p, xi);
        EXPECT_NEAR(back.x, v.x, 1e-12 * std::max(1.0, norm(v)));
        EXPECT_NEAR(back.y, v.y, 1e-12 * std::max(1.0, norm(v)));
        // lowering by perp and raising with g^{-1} is a -90 degree rotation; twice gives -v
        auto raise = [&](CoVec2 c) { return Vec2{c.x / m.factor(p), c.y / m.factor(p)}; };
        const Vec2 twice = raise(m.perp(p, raise(m.perp(p, v))));
        EXPECT_NEAR(twice.x, -v.x, 1e-12 * std::max(1.0, norm(v)));
        EXPECT_NEAR(twice.y, -v.y, 1e-12 * std::max(1.0, norm(v)));
    }
}
