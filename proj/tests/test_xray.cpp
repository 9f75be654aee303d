#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "conjray/xray.hpp"

using namespace conjray;

namespace {

const Disk kUnit{{0, 0}, 1.0};

SinogramLayout small_layout(std::size_t nb = 72, std::size_t na = 45) {
    SinogramLayout l;
    l.n_beta = nb;
    l.n_alpha = na;
    return l;
}

double max_abs(const Sinogram& s) {
    double m = 0.0;
    for (double v : s.values()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

TEST(Forward, EuclideanChordLengths) {
    const auto m = ConformalMetric::euclidean();
    const auto lay = small_layout(360, 90);
    const auto t0 = std::chrono::steady_clock::now();
    auto one = GridFunction::square(64);
    for (double& v : one.values()) v = 1.0;
    const auto s = forward(m, kUnit, WeightSpec::unit(), one, lay, Orientation::plus, 1e-3);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0.0;
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia)
            worst = std::max(worst, std::abs(s(ib, ia) - 2.0 * std::cos(lay.alpha(ia))));
    EXPECT_LT(worst, 5e-3);
    EXPECT_LT(secs, 30.0);
}

TEST(Forward, ZeroGivesZero) {
    const auto s = forward(ConformalMetric::lens(), kUnit, WeightSpec::attenuation(0.5), ConstantField{0.0},
                           small_layout(), Orientation::minus, 1e-2);
    EXPECT_EQ(max_abs(s), 0.0);
    EXPECT_EQ(s.orientation(), Orientation::minus);
}

TEST(Forward, CenteredGaussianClosedForm) {
    const auto m = ConformalMetric::euclidean();
    const double w = 0.05;
    const auto lay = small_layout(8, 41);
    const auto s = forward(m, kUnit, WeightSpec::unit(), GaussianField{{0, 0}, w, 1.0}, lay, Orientation::plus, 1e-3);
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia) {
            const double d = std::sin(std::abs(lay.alpha(ia)));
            EXPECT_NEAR(s(ib, ia), std::sqrt(2 * kPi) * w * std::exp(-d * d / (2 * w * w)), 1e-6);
        }
    EXPECT_NEAR(s(0, 20), 0.12533, 1e-5);
    // the same from a sampled grid (bilinear interpolation)
    const auto g = sample(GridFunction::square(401), GaussianField{{0, 0}, w, 1.0});
    const auto sg = forward(m, kUnit, WeightSpec::unit(), g, lay, Orientation::plus, 1e-3);
    EXPECT_NEAR(sg(0, 20), std::sqrt(2 * kPi) * w, 1e-4);
}

TEST(Forward, Linearity) {
    const auto m = ConformalMetric::lens();
    const auto grid = GridFunction::square(101);
    const auto f1 = gaussian_blob(grid, {0.2, -0.3}, 0.08);
    const auto f2 = gaussian_blob(grid, {-0.1, 0.4}, 0.1, -0.6);
    const double c = 2.7;
    const auto lay = small_layout();
    const WeightSpec w = WeightSpec::attenuation(0.8);
    const auto lhs = forward(m, kUnit, w, f1 + c * f2, lay, Orientation::plus, 1e-2);
    const auto rhs = forward(m, kUnit, w, f1, lay, Orientation::plus, 1e-2) +
                     c * forward(m, kUnit, w, f2, lay, Orientation::plus, 1e-2);
    EXPECT_LT(max_abs(lhs - rhs), 1e-12);
}

TEST(Forward, MinusOrientationIsReversedRay) {
    const auto m = ConformalMetric::lens();
    const auto f = GaussianField{{0.15, 0.1}, 0.12, 1.0};
    const auto lay = small_layout(360, 180);
    const auto plus = forward(m, kUnit, WeightSpec::unit(), f, lay, Orientation::plus, 5e-3);
    const auto minus = forward(m, kUnit, WeightSpec::unit(), f, lay, Orientation::minus, 5e-3);
    double worst = 0.0;
    for (std::size_t ib = 0; ib < lay.n_beta; ib += 7)
        for (std::size_t ia = 10; ia + 10 < lay.n_alpha; ia += 3) {
            const auto path = shoot(m, kUnit, {lay.beta(ib), lay.alpha(ia)}, 5e-3);
            const auto ex = exit_coord(m, kUnit, path);
            worst = std::max(worst, std::abs(minus(ib, ia) - plus.eval(ex.beta, ex.alpha)));
        }
    EXPECT_LT(worst, 1e-3);
}

TEST(Forward, EuclideanMassIdentity) {
    const auto m = ConformalMetric::euclidean();
    const double w = 0.1;
    const auto lay = small_layout(360, 180);
    const auto s = forward(m, kUnit, WeightSpec::unit(), GaussianField{{0.2, -0.1}, w, 1.0}, lay, Orientation::plus,
                           1e-2);
    double total = 0.0;
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia) {
            const double wa = (ia == 0 || ia + 1 == lay.n_alpha) ? 0.5 : 1.0;
            total += wa * s(ib, ia) * std::cos(lay.alpha(ia));
        }
    total *= lay.d_alpha() * lay.d_beta();
    const double mass = 2 * kPi * w * w;
    EXPECT_NEAR(total / (2 * kPi * mass), 1.0, 1e-3);
}

TEST(RayBundle, MatchesDirectForward) {
    const auto m = ConformalMetric::lens();
    const auto lay = small_layout();
    const WeightSpec w = WeightSpec::attenuation(0.5);
    const RayBundle rb(m, kUnit, w, lay, Orientation::minus, 1e-2);
    const auto f = sample(GridFunction::square(81), GaussianField{{0.1, 0.2}, 0.1, 1.0});
    const auto a = rb.apply(f);
    const auto b = forward(m, kUnit, w, f, lay, Orientation::minus, 1e-2);
    EXPECT_LT(max_abs(a - b), 1e-5 * max_abs(b));
    EXPECT_EQ(a.orientation(), Orientation::minus);
}

TEST(Kappa, ZeroAttenuationIsOne) {
    const auto m = ConformalMetric::lens();
    EXPECT_EQ(kappa(m, kUnit, WeightSpec::attenuation(0.0), {0.1, 0.2}, m.unit_vector({0.1, 0.2}, 0.3)), 1.0);
}

TEST(Kappa, EuclideanConstant) {
    const auto m = ConformalMetric::euclidean();
    EXPECT_NEAR(attenuation_kappa(m, kUnit, {1.0, std::nullopt}, {0, 0}, {1, 0}), 0.367879, 1e-6);
    // the integrated path must agree with the closed form
    auto sig = GridFunction::square(21);
    for (double& v : sig.values()) v = 1.0;
    EXPECT_NEAR(kappa(m, kUnit, WeightSpec::attenuation(sig), {0, 0}, {1, 0}), std::exp(-1.0), 1e-9);
}

TEST(Kappa, LensVerticalHalfDiameter) {
    const auto m = ConformalMetric::lens();
    const auto path = shoot(m, kUnit, {kPi / 2, 0.0}, 1e-3);
    const double L = 0.5 * path.exit_time;
    auto sig = GridFunction::square(21);
    for (double& v : sig.values()) v = 1.0;
    const Vec2 v = m.unit_vector({0, 0}, kPi / 2);
    EXPECT_NEAR(kappa(m, kUnit, WeightSpec::attenuation(sig), {0, 0}, v, 1e-3), std::exp(-L), 1e-8);
}

TEST(Kappa, NondecreasingAlongFlow) {
    const auto m = ConformalMetric::lens();
    auto sig = GridFunction::square(41);
    for (std::size_t i = 0; i < sig.size(); ++i) {
        const Vec2 p = sig.node(i);
        sig[i] = 0.5 + p.x * p.x + 0.3 * std::sin(3 * p.y) * std::sin(3 * p.y);
    }
    const auto w = WeightSpec::attenuation(sig);
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-1.4, 1.4);
    for (int r = 0; r < 100; ++r) {
        const auto path = shoot(m, kUnit, {ub(rng), ua(rng)}, 5e-3);
        double prev = 0.0;
        const std::size_t stride = std::max<std::size_t>(1, path.samples.size() / 10);
        for (std::size_t i = 0; i + 1 < path.samples.size(); i += stride) {
            const auto& s = path.samples[i];
            const double k = kappa(m, kUnit, w, s.x, s.v, 5e-3);
            EXPECT_GE(k, prev - 1e-12);
            EXPECT_LE(k, 1.0);
            prev = k;
        }
    }
}

TEST(Kappa, RejectsNegativeAttenuation) {
    EXPECT_THROW(WeightSpec::attenuation(-0.1), InputError);
    auto sig = GridFunction::square(5);
    sig[3] = -1.0;
    EXPECT_THROW(WeightSpec::attenuation(sig), InputError);
}

TEST(R1, UnitAndEvenWeightsVanish) {
    const auto m = ConformalMetric::lens();
    const auto path = shoot(m, kUnit, {kPi / 2, 0.0});
    const auto pair = integrate_jacobi(m, path);
    const auto ev = conjugate_event(m, path, pair, 0.1, conjugate_times(pair, 0.1).at(0));
    EXPECT_EQ(r1_determinant(m, kUnit, WeightSpec::unit(), ev), 0.0);
    const auto even = WeightSpec::custom([](Vec2 x, Vec2 v) { return 1.0 + x.x * x.x + v.x * v.x + 0.3 * v.y * v.y; });
    EXPECT_LE(std::abs(r1_determinant(m, kUnit, even, ev)), 1e-12);
}

TEST(R1, AttenuatedLensIsPositiveWithClosedForm) {
    const auto m = ConformalMetric::lens();
    const auto path = shoot(m, kUnit, {kPi / 2, 0.0});
    const auto pair = integrate_jacobi(m, path);
    const double t1 = 0.1;
    const auto ev = conjugate_event(m, path, pair, t1, conjugate_times(pair, t1).at(0));
    const auto w = WeightSpec::attenuation(1.0);
    const double det = r1_determinant(m, kUnit, w, ev);
    EXPECT_GT(det, 0.0);
    // t2 > t1, so p2 is the downstream point and heads the first column
    const double k11 = kappa(m, kUnit, w, ev.p2, ev.v2), k22 = kappa(m, kUnit, w, ev.p1, -ev.v1);
    const double closed = k11 * k22 * (1.0 - std::exp(-2.0 * std::abs(ev.t2 - ev.t1)));
    EXPECT_NEAR(det / closed, 1.0, 1e-6);
}

TEST(Phantom, SingleBlobPeak) {
    const auto grid = GridFunction::square(201);
    const auto f = gaussian_blob(grid, {0.0, -0.5}, 0.03);
    double peak = 0.0;
    for (double v : f.values()) peak = std::max(peak, v);
    EXPECT_NEAR(peak, 1.0, 1e-12);
    EXPECT_NEAR(f.eval({0.0, -0.5}), 1.0, 1e-12);
}

TEST(Phantom, OppositeBlobsIntegrateToZero) {
    const auto grid = GridFunction::square(201);
    const auto f = blob_collection(grid, {{{0.3, 0.1}, 0.05, 1.0}, {{-0.4, -0.2}, 0.05, -1.0}});
    double s = 0.0;
    for (double v : f.values()) s += v;
    EXPECT_NEAR(s * f.cell_area(), 0.0, 1e-6);
}

TEST(Phantom, Preconditions) {
    const auto grid = GridFunction::square(101);
    EXPECT_THROW(gaussian_blob(grid, {0.8, 0.0}, 0.05), BlobOutsideDomain);
    EXPECT_THROW(gaussian_blob(grid, {0.0, 0.0}, 0.03), InputError);  // 1.5 spacings
    EXPECT_NO_THROW(gaussian_blob(grid, {0.7, 0.0}, 0.05));
}
