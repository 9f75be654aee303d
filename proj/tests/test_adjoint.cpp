#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "conjray/adjoint.hpp"

using namespace conjray;

namespace {

const Disk kUnit{{0, 0}, 1.0};

struct Blobs {
    std::vector<Blob> blobs;
    double eval(Vec2 p) const {
        double s = 0.0;
        for (const auto& b : blobs) s += GaussianField{b.center, b.width, b.amplitude}.eval(p);
        return s;
    }
};

Blobs random_blobs(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(-0.5, 0.5), w(0.08, 0.15), a(-1.0, 1.0);
    Blobs b;
    for (int i = 0; i < n; ++i) b.blobs.push_back({{u(rng), u(rng)}, w(rng), a(rng)});
    return b;
}

// Smooth sinogram vanishing towards tangent rays.
Sinogram random_sinogram(std::mt19937_64& rng, const SinogramLayout& lay) {
    std::uniform_real_distribution<double> ph(0.0, kTwoPi), amp(0.5, 1.5);
    const double p1 = ph(rng), p2 = ph(rng), a1 = amp(rng), a2 = amp(rng);
    Sinogram g(lay);
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia) {
            const double b = lay.beta(ib), a = lay.alpha(ia);
            g(ib, ia) = std::pow(std::cos(a), 2) * (a1 + std::cos(2 * b + p1) + a2 * std::sin(3 * a + b + p2));
        }
    return g;
}

double l2_inside(const GridFunction& f, double radius) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (norm(f.node(i)) <= radius) s += f[i] * f[i];
    return std::sqrt(s);
}

SinogramLayout layout(std::size_t nb, std::size_t na) {
    SinogramLayout l;
    l.n_beta = nb;
    l.n_alpha = na;
    return l;
}

}  // namespace

TEST(Directions, Validation) {
    EXPECT_THROW(DirectionGrid(32), InputError);
    EXPECT_THROW(DirectionGrid(129), InputError);
    EXPECT_NO_THROW(DirectionGrid(64));
}

TEST(Backproject, ZeroAndConstant) {
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(33);
    const auto lay = layout(90, 45);
    Sinogram zero(lay);
    const FiberTable ft(e, kUnit, WeightSpec::unit(), grid, DirectionGrid(64));
    for (double v : ft.backproject(zero).values()) EXPECT_EQ(v, 0.0);
    Sinogram one(lay);
    for (double& v : one.values()) v = 1.0;
    const auto b = ft.backproject(one);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec2 p = grid.node(i);
        // rays hitting the alpha guard band read 0; away from the rim every direction is inside it
        if (norm(p) < 0.95) {
            EXPECT_NEAR(b[i], kTwoPi, 1e-6) << p.x << "," << p.y;
        }
        if (norm(p) > 1.0) {
            EXPECT_EQ(b[i], 0.0);
        }
    }
}

TEST(Backproject, MaskedCellsContributeNothing) {
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(33);
    const auto lay = layout(90, 45);
    Sinogram one(lay);
    for (double& v : one.values()) v = 1.0;
    one.set_mask(std::vector<std::uint8_t>(lay.size(), 0));
    for (double v : backproject(e, kUnit, WeightSpec::unit(), one, grid, DirectionGrid(64)).values()) EXPECT_EQ(v, 0.0);
}

TEST(Backproject, AdjointIdentityLens) {
    const auto m = ConformalMetric::lens();
    const auto grid = GridFunction::square(101);
    const auto lay = layout(240, 120);
    const FiberTable ft(m, kUnit, WeightSpec::unit(), grid, DirectionGrid(256));
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const Blobs f = random_blobs(rng, 3);
        const auto fg = sample(grid, f);
        const Sinogram g = random_sinogram(rng, lay);
        const Sinogram Xf = forward(m, kUnit, WeightSpec::unit(), f, lay, Orientation::plus, 1e-2);
        const double lhs = inner_dgamma(m, kUnit, Xf, g);
        const double rhs = inner_area(m, kUnit, fg, ft.backproject(g));
        const double scale = norm_dgamma(m, kUnit, Xf) * norm_dgamma(m, kUnit, g);
        EXPECT_LT(std::abs(lhs - rhs) / scale, 1e-2) << lhs << " vs " << rhs;
    }
}

TEST(Backproject, AdjointIdentityAttenuatedMinus) {
    const auto m = ConformalMetric::lens();
    const auto grid = GridFunction::square(81);
    const auto lay = layout(180, 90);
    const auto w = WeightSpec::attenuation(0.7);
    const FiberTable ft(m, kUnit, w, grid, DirectionGrid(128));
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 3; ++trial) {
        const Blobs f = random_blobs(rng, 2);
        Sinogram g = random_sinogram(rng, lay);
        g.set_orientation(Orientation::minus);
        const Sinogram Xf = forward(m, kUnit, w, f, lay, Orientation::minus, 1e-2);
        const double lhs = inner_dgamma(m, kUnit, Xf, g);
        const double rhs = inner_area(m, kUnit, sample(grid, f), ft.backproject(g));
        EXPECT_LT(std::abs(lhs - rhs) / (norm_dgamma(m, kUnit, Xf) * norm_dgamma(m, kUnit, g)), 1e-2);
    }
}

TEST(Normal, SymmetricAndPositive) {
    const auto m = ConformalMetric::lens();
    const auto grid = GridFunction::square(81);
    NormalOperator::Options o;
    o.sinogram = layout(180, 90);
    o.dirs = DirectionGrid(128);
    const NormalOperator N(m, kUnit, WeightSpec::unit(), grid, o);
    std::mt19937_64 rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const auto f1 = sample(grid, random_blobs(rng, 2));
        const auto f2 = sample(grid, random_blobs(rng, 2));
        const auto n1 = N.apply(f1);
        EXPECT_GT(inner_area(m, kUnit, n1, f1), 0.0);
        if (trial < 5) {
            const double a = inner_area(m, kUnit, n1, f2), b = inner_area(m, kUnit, f1, N.apply(f2));
            EXPECT_LT(std::abs(a - b) / (norm_area(m, kUnit, f1) * norm_area(m, kUnit, f2)), 1e-2);
        }
    }
}

TEST(Normal, EuclideanRotationalSymmetry) {
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(81);
    NormalOperator::Options o;
    o.sinogram = layout(360, 180);
    const auto out = normal_op(e, kUnit, WeightSpec::unit(), GaussianField{{0, 0}, 0.1, 1.0}, grid, o);
    double peak = 0.0;
    for (double v : out.values()) peak = std::max(peak, std::abs(v));
    double worst = 0.0;
    const std::size_t n = grid.nx();
    for (std::size_t ix = 0; ix < n; ++ix)
        for (std::size_t iy = 0; iy < n; ++iy) {
            worst = std::max(worst, std::abs(out(ix, iy) - out(iy, ix)));
            worst = std::max(worst, std::abs(out(ix, iy) - out(n - 1 - ix, iy)));
            worst = std::max(worst, std::abs(out(ix, iy) - out(n - 1 - iy, ix)));
        }
    EXPECT_LT(worst, 1e-3 * peak);
}

TEST(Normal, DirectionResolution) {
    const auto m = ConformalMetric::lens();
    const auto grid = GridFunction::square(61);
    NormalOperator::Options o;
    o.sinogram = layout(360, 180);
    const auto f = GaussianField{{0.2, -0.1}, 0.12, 1.0};
    o.dirs = DirectionGrid(256);
    const auto a = normal_op(m, kUnit, WeightSpec::unit(), f, grid, o);
    o.dirs = DirectionGrid(512);
    const auto b = normal_op(m, kUnit, WeightSpec::unit(), f, grid, o);
    EXPECT_LT(l2_norm(a - b) / l2_norm(b), 5e-3);
}

// Plane-wave probes: N has symbol 4 pi / |xi| when X* integrates over the
// whole circle of directions at each point.
class PlaneWave {
public:
    PlaneWave(double omega, Vec2 dir) : omega_(omega), dir_(dir) {}
    double eval(Vec2 p) const {
        const double r2 = dot(p, p);
        return std::exp(-r2 / (2 * 0.15 * 0.15)) * std::cos(omega_ * dot(p, dir_));
    }

private:
    double omega_;
    Vec2 dir_;
};

TEST(Normal, PlaneWaveSymbolAndDecay) {
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(301);
    NormalOperator::Options o;
    o.sinogram = layout(720, 360);
    o.dirs = DirectionGrid(512);
    const NormalOperator N(e, kUnit, WeightSpec::unit(), grid, o);
    double ratio[2];
    const double omegas[2] = {40.0, 80.0};
    for (int k = 0; k < 2; ++k) {
        const auto f = sample(grid, PlaneWave(omegas[k], unit(0.3)));
        ratio[k] = l2_inside(N.apply(f), 0.3) / l2_inside(f, 0.3);
        EXPECT_NEAR(ratio[k] / (4 * kPi / omegas[k]), 1.0, 0.1);
    }
    EXPECT_NEAR(ratio[1] / ratio[0], 0.5, 0.5 * 0.15);
}

TEST(Normal, AttenuatedSymbolRatio) {
    // with sigma = 1 the symbol carries (kappa_+^2 + kappa_-^2) / 2 relative to kappa = 1
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(201);
    NormalOperator::Options o;
    o.sinogram = layout(720, 360);
    const double omega = 40.0;
    const Vec2 dir = unit(0.0);
    const auto f = sample(grid, PlaneWave(omega, dir));
    const NormalOperator N1(e, kUnit, WeightSpec::unit(), grid, o);
    const NormalOperator Na(e, kUnit, WeightSpec::attenuation(1.0), grid, o);
    const double r = l2_inside(Na.apply(f), 0.3) / l2_inside(N1.apply(f), 0.3);
    // xi along x: the rays run along +-y; average the kappa factor over the probe
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec2 p = grid.node(i);
        if (norm(p) > 0.3) continue;
        const double up = std::exp(-straight_exit(kUnit, p, {0, 1}).time);
        const double dn = std::exp(-straight_exit(kUnit, p, {0, -1}).time);
        const double w = f[i] * f[i];
        num += w * 0.5 * (up * up + dn * dn);
        den += w;
    }
    EXPECT_NEAR(r / (num / den), 1.0, 0.15);
}

TEST(LaplaceBeltrami, Stencil) {
    auto grid = GridFunction::square(41);
    auto q = grid.zeros_like(), h = grid.zeros_like();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec2 p = grid.node(i);
        q[i] = dot(p, p);
        h[i] = p.x * p.x - p.y * p.y;
    }
    const auto e = ConformalMetric::euclidean();
    const auto lq = laplace_beltrami(e, q);
    for (std::size_t ix = 1; ix + 1 < 41; ++ix)
        for (std::size_t iy = 1; iy + 1 < 41; ++iy) EXPECT_NEAR(lq(ix, iy), 4.0, 1e-9);
    EXPECT_EQ(lq(0, 5), 0.0);
    const auto lens = ConformalMetric::lens();
    for (double v : laplace_beltrami(lens, h).values()) EXPECT_NEAR(v, 0.0, 1e-9);
    EXPECT_NEAR(laplace_beltrami(lens, q)(20, 20), 4.0 * std::exp(-1.2), 1e-9);
    EXPECT_NEAR(laplace_beltrami(lens, q)(20, 20), 1.20478, 1e-5);
    EXPECT_THROW(laplace_beltrami(e, GridFunction::square(15)), GridTooCoarse);
}

TEST(Artifact, EuclideanCalibrationAndNoLoci) {
    const auto e = ConformalMetric::euclidean();
    const auto grid = GridFunction::square(201);
    ArtifactOptions o;
    o.normal.sinogram = layout(720, 360);
    o.locus_dirs = 64;
    const std::vector<Blob> blobs{{{0.1, -0.2}, 0.05, 1.0}};
    const auto r = artifact_pipeline(e, kUnit, grid, blobs, o);
    EXPECT_FALSE(r.localization_score.has_value());
    const auto f1 = blob_collection(grid, blobs);
    EXPECT_LT(l2_inside(r.recon - f1, 0.9) / l2_inside(f1, 0.9), 0.15);
    EXPECT_LT(r.outside_energy, 0.05 * r.recon_energy);
}

TEST(Artifact, DistanceToLocus) {
    ConjugateLocus loc;
    for (int i = 0; i < 16; ++i) {
        LocusVertex v;
        v.theta = i;
        if (i < 8) {
            v.t_c = 1.0;
            v.point = {0.01 * i, 0.0};
        }
        loc.vertices.push_back(v);
    }
    EXPECT_NEAR(distance_to_locus(loc, {0.035, 0.02}), 0.02, 1e-12);
    EXPECT_NEAR(distance_to_locus(loc, {0.1, 0.0}), 0.03, 1e-12);
}
