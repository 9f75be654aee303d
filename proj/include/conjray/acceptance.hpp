#pragma once

// End-to-end acceptance checks, one per criterion. Shared by the `selftest`
// subcommand and the acceptance test binary. Each check reports what it
// measured; thresholds are fixed here.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "conjray/inversion.hpp"

namespace conjray {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;  // measured values
    double seconds = 0.0;
};

namespace acceptance {

inline const Disk kUnit{{0.0, 0.0}, 1.0};

inline std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

inline SinogramLayout chart(std::size_t nb, std::size_t na) {
    SinogramLayout l;
    l.n_beta = nb;
    l.n_alpha = na;
    return l;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Vec2 random_point(std::mt19937_64& rng, double r) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double rad = r * std::sqrt(u(rng)), th = kTwoPi * u(rng);
    return rad * unit(th);
}

// Gaussian-windowed plane wave centred at the origin.
struct PlaneWave {
    double omega;
    Vec2 dir;
    double eval(Vec2 p) const { return std::exp(-dot(p, p) / (2 * 0.15 * 0.15)) * std::cos(omega * dot(p, dir)); }
};

struct Blobs {
    std::vector<Blob> blobs;
    double eval(Vec2 p) const {
        double s = 0.0;
        for (const auto& b : blobs) s += GaussianField{b.center, b.width, b.amplitude}.eval(p);
        return s;
    }
};

// Conjugate events on random lens rays.
inline std::vector<std::pair<ConjugateEvent, GeodesicPath>> lens_events(const ConformalMetric& m, int count,
                                                                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-0.6, 0.6), uf(0.0, 1.0);
    std::vector<std::pair<ConjugateEvent, GeodesicPath>> out;
    for (int trial = 0; trial < 20 * count && static_cast<int>(out.size()) < count; ++trial) {
        GeodesicPath path = shoot(m, kUnit, {ub(rng), ua(rng)}, 1e-3);
        const ScalarJacobiPair pair = integrate_jacobi(m, path);
        const double t1 = uf(rng) * path.exit_time;
        for (double t2 : conjugate_times(pair, t1)) {
            if (static_cast<int>(out.size()) >= count) break;
            out.emplace_back(conjugate_event(m, path, pair, t1, t2), path);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

inline CriterionResult c1_euclidean_chord() {
    CriterionResult r{1, "euclidean chord lengths", false, {}, 0.0};
    const int saved = thread_count();
    set_thread_count(1);
    const auto t0 = std::chrono::steady_clock::now();
    const SinogramLayout lay = chart(360, 90);
    const Sinogram s = forward(ConformalMetric::euclidean(), kUnit, WeightSpec::unit(), ConstantField{1.0}, lay,
                               Orientation::plus, 1e-3);
    const double secs = seconds_since(t0);
    set_thread_count(saved);
    double worst = 0.0;
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia)
            worst = std::max(worst, std::abs(s(ib, ia) - 2.0 * std::cos(lay.alpha(ia))));
    r.pass = worst < 5e-3 && secs < 30.0;
    r.detail = format("max|Xf-2cos a| = %.3g (< 5e-3), single-thread %.1fs (< 30s)", worst, secs);
    return r;
}

inline CriterionResult c2_constant_curvature() {
    CriterionResult r{2, "constant curvature", false, {}, 0.0};
    const auto m = ConformalMetric::sphere_cap();
    std::mt19937_64 rng(5);
    double worst_k = 0.0;
    for (int i = 0; i < 1000; ++i) worst_k = std::max(worst_k, std::abs(m.gauss_curvature(random_point(rng, 1.0)) - 1.0));
    // cap larger than a hemisphere so every chord reaches arclength pi
    const Disk cap{{0.0, 0.0}, 2.0};
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-1.3, 1.3);
    double worst_t = 0.0;
    int missing = 0;
    for (int i = 0; i < 50; ++i) {
        const GeodesicPath p = shoot(m, cap, {ub(rng), ua(rng)}, 1e-3);
        const auto ts = conjugate_times(integrate_jacobi(m, p), 0.0);
        if (ts.empty()) {
            ++missing;
            continue;
        }
        worst_t = std::max(worst_t, std::abs(ts.front() - kPi));
    }
    r.pass = worst_k < 1e-9 && worst_t < 1e-3 && missing == 0;
    r.detail = format("max|K-1| = %.2g (< 1e-9), max|t_c - pi| = %.2g over 50 rays (< 1e-3), missing %d", worst_k,
                      worst_t, missing);
    return r;
}

inline CriterionResult c3_conservation() {
    CriterionResult r{3, "speed and Wronskian conservation", false, {}, 0.0};
    const auto m = ConformalMetric::lens();
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ub(0.0, kTwoPi), ua(-1.55, 1.55);
    double worst_w = 0.0, worst_v = 0.0;
    for (int i = 0; i < 500; ++i) {
        const GeodesicPath p = shoot(m, kUnit, {ub(rng), ua(rng)}, 1e-3);
        const ScalarJacobiPair pair = integrate_jacobi(m, p);
        for (std::size_t k = 0; k < pair.size(); ++k) {
            worst_w = std::max(worst_w, std::abs(pair.wronskian(k) - 1.0));
            worst_v = std::max(worst_v, std::abs(m.norm(p.samples[k].x, p.samples[k].v) - 1.0));
        }
    }
    r.pass = worst_v < 1e-8 && worst_w < 1e-8;
    r.detail = format("speed drift %.2g, Wronskian drift %.2g on 500 lens rays (< 1e-8)", worst_v, worst_w);
    return r;
}

inline CriterionResult c4_canonical_relation() {
    CriterionResult r{4, "canonical relation", false, {}, 0.0};
    const auto m = ConformalMetric::lens();
    const auto events = lens_events(m, 50, 31);
    double worst = 0.0;
    for (const auto& [ev, path] : events) {
        const ScalarJacobiPair pair = integrate_jacobi(m, path);
        const CanonicalPoint a = canonical_map(path, pair, ev.t1, 0.7 * ev.cprime1);
        const CanonicalPoint b = canonical_map(path, pair, ev.t2, 0.7 * ev.cprime2);
        worst = std::max({worst, std::abs(a.beta - b.beta), std::abs(a.alpha - b.alpha), std::abs(a.y_hat - b.y_hat),
                          std::abs(a.eta_hat - b.eta_hat)});
    }
    // swap symmetry: C21 followed by C21 from the image returns the start
    double worst_swap = 0.0;
    int pairs = 0;
    const Vec2 bases[] = {{0.0, -0.4}, {0.1, -0.5}, {-0.2, -0.45}, {0.3, -0.3}};
    const CoVec2 covs[] = {{1.0, 0.0}, {0.8, 0.6}, {1.0, -0.3}};
    for (Vec2 p1 : bases)
        for (CoVec2 xi1 : covs)
            for (const auto& c : c21_map(m, kUnit, p1, xi1)) {
                double best = 1e9, dxi = 0.0;
                const double s = std::hypot(xi1.x, xi1.y);
                for (const auto& b : c21_map(m, kUnit, c.p2, c.xi2))
                    if (norm(b.p2 - p1) < best)
                        best = norm(b.p2 - p1), dxi = std::hypot(b.xi2.x - xi1.x, b.xi2.y - xi1.y) / s;
                worst_swap = std::max({worst_swap, best, dxi});
                ++pairs;
            }
    r.pass = events.size() >= 50 && worst < 1e-6 && pairs > 0 && worst_swap < 1e-5;
    r.detail = format("%zu events: max chart mismatch %.2g (< 1e-6); %d C21 pairs: swap error %.2g (< 1e-5)",
                      events.size(), worst, pairs, worst_swap);
    return r;
}

inline CriterionResult c5_adjointness() {
    CriterionResult r{5, "adjointness", false, {}, 0.0};
    const auto m = ConformalMetric::lens();
    const GridFunction grid = GridFunction::square(101);
    const SinogramLayout lay = chart(240, 120);
    const FiberTable ft(m, kUnit, WeightSpec::unit(), grid, DirectionGrid(256));
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-0.5, 0.5), w(0.08, 0.15), a(-1.0, 1.0), ph(0.0, kTwoPi), amp(0.5, 1.5);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Blobs f;
        for (int i = 0; i < 3; ++i) f.blobs.push_back({{u(rng), u(rng)}, w(rng), a(rng)});
        const double p1 = ph(rng), p2 = ph(rng), a1 = amp(rng), a2 = amp(rng);
        Sinogram g(lay);
        for (std::size_t ib = 0; ib < lay.n_beta; ++ib)
            for (std::size_t ia = 0; ia < lay.n_alpha; ++ia) {
                const double b = lay.beta(ib), al = lay.alpha(ia);
                g(ib, ia) = std::pow(std::cos(al), 2) * (a1 + std::cos(2 * b + p1) + a2 * std::sin(3 * al + b + p2));
            }
        const Sinogram Xf = forward(m, kUnit, WeightSpec::unit(), f, lay, Orientation::plus, 1e-2);
        const double lhs = inner_dgamma(m, kUnit, Xf, g);
        const double rhs = inner_area(m, kUnit, sample(grid, f), ft.backproject(g));
        worst = std::max(worst, std::abs(lhs - rhs) / (norm_dgamma(m, kUnit, Xf) * norm_dgamma(m, kUnit, g)));
    }
    r.pass = worst < 1e-2;
    r.detail = format("max relative <Xf,g> - <f,X*g> = %.2g over 5 pairs (< 1e-2)", worst);
    return r;
}

inline CriterionResult c6_symbol() {
    CriterionResult r{6, "normal operator symbol", false, {}, 0.0};
    const auto e = ConformalMetric::euclidean();
    const GridFunction grid = GridFunction::square(301);
    NormalOperator::Options o;
    o.sinogram = chart(720, 360);
    o.dirs = DirectionGrid(512);
    const NormalOperator N(e, kUnit, WeightSpec::unit(), grid, o);
    auto inside = [](const GridFunction& f) {
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (norm(f.node(i)) <= 0.3) s += f[i] * f[i];
        return std::sqrt(s);
    };
    double ratio[2];
    const double omegas[2] = {40.0, 80.0};
    for (int k = 0; k < 2; ++k) {
        const GridFunction f = sample(grid, PlaneWave{omegas[k], unit(0.3)});
        ratio[k] = inside(N.apply(f)) / inside(f);
    }
    const double q40 = ratio[0] / (kTwoPi / 40.0), q80 = ratio[1] / (kTwoPi / 80.0);
    const double halving = ratio[1] / ratio[0];
    const bool level = std::abs(q40 - 1.0) < 0.1 && std::abs(q80 - 1.0) < 0.1;
    const bool decay = std::abs(halving - 0.5) < 0.5 * 0.15;
    r.pass = level && decay;
    r.detail = format("ratio/(2pi/w) = %.3f (w=40), %.3f (w=80) (within 10%%: %s); ratio/(4pi/w) = %.3f, %.3f; "
                      "halving %.3f (0.5 within 15%%: %s)",
                      q40, q80, level ? "yes" : "no", q40 / 2, q80 / 2, halving, decay ? "yes" : "no");
    return r;
}

inline CriterionResult c7_inversion() {
    CriterionResult r{7, "simple-domain inversion", false, {}, 0.0};
    const auto t0 = std::chrono::steady_clock::now();
    auto run = [](const ConformalMetric& m, const Disk& d, const GaussianField& f, int& its) {
        InversionOptions o;
        o.grid_spacing = 2.0 * d.radius / 200.0;  // 201 x 201 nodes
        const SubdomainInverter inv(m, make_simple_subdomain(m, d, chart(360, 180)), WeightSpec::unit(), o);
        const NeumannResult res = inv.solve(inv.forward(f));
        its = res.iterations;
        const GridFunction truth = sample(inv.layout(), f);
        return l2_norm(res.f - truth) / l2_norm(truth);
    };
    int it_e = 0, it_l = 0;
    const double err_e = run(ConformalMetric::euclidean(), kUnit, {{0.0, 0.0}, 0.08, 1.0}, it_e);
    const double secs_e = seconds_since(t0);
    const double err_l = run(ConformalMetric::lens(), {{0.0, 0.5}, 0.5}, {{0.0, 0.5}, 0.06, 1.0}, it_l);
    const double secs = seconds_since(t0);
    r.pass = err_e < 0.03 && err_l < 0.05 && it_e <= 30 && it_l <= 30 && secs_e < 300 && secs - secs_e < 300;
    r.detail = format("euclidean %.4f in %d its (< 0.03), lens U2 %.4f in %d its (< 0.05); %.0fs + %.0fs (< 300s each)",
                      err_e, it_e, err_l, it_l, secs_e, secs - secs_e);
    return r;
}

inline CriterionResult c8_cancellation() {
    CriterionResult r{8, "cancellation of singularities", false, {}, 0.0};
    const auto m = ConformalMetric::lens();
    const SimpleSubdomain u2 = make_simple_subdomain(m, {{0.0, 0.5}, 0.5}, chart(360, 180));
    const CancelResult c = cancellation_pipeline(m, kUnit, {{0.0, -0.5}, 0.03, 1.0}, u2);
    r.pass = c.cancellation_ratio <= 0.3 && c.outside_change < 0.1;
    r.detail = format("cancellation ratio %.3f (<= 0.3; f1+f2 gives %.3f), outside change %.3f (< 0.1), "
                      "coverage %.2f",
                      c.cancellation_ratio, c.sum_ratio, c.outside_change, c.coverage);
    return r;
}

/// Blob layout of the artifact experiment: alternating ring around the lens
/// centre (0.2, 0) plus two blobs near the centre whose loci miss M.
inline std::vector<Blob> artifact_blobs(double width = 0.03) {
    std::vector<Blob> blobs = blob_ring({0.2, 0.0}, 0.55, 5, width);
    blobs.push_back({{0.1, 0.1}, width, 1.0});
    blobs.push_back({{0.3, -0.1}, width, -1.0});
    return blobs;
}

inline CriterionResult c9_artifacts() {
    CriterionResult r{9, "artifact localisation", false, {}, 0.0};
    const auto m = ConformalMetric::lens(1.2, 0.25, {0.2, 0.0});
    ArtifactOptions o;
    o.normal.sinogram = chart(720, 360);
    o.normal.ray_step = 2e-2;
    const ArtifactResult a = artifact_pipeline(m, kUnit, GridFunction::square(201), artifact_blobs(), o);
    double conj = 0.0, free_max = 0.0;
    int n_conj = 0, n_free = 0;
    for (const auto& b : a.blobs) {
        if (b.locus_vertices > 0) conj += b.energy, ++n_conj;
        else free_max = std::max(free_max, b.energy), ++n_free;
    }
    const double per = n_conj > 0 && conj > 0 ? free_max / (conj / n_conj) : 1.0;
    const double score = a.localization_score.value_or(0.0);
    r.pass = score >= 0.6 && n_free > 0 && per < 0.1;
    r.detail = format("localisation score %.3f (>= 0.6); locus-free blob energy %.3f of a conjugate blob's "
                      "(< 0.1; %d conjugate, %d locus-free)",
                      score, per, n_conj, n_free);
    return r;
}

inline CriterionResult c10_attenuated() {
    CriterionResult r{10, "attenuated dichotomy", false, {}, 0.0};
    const auto m = ConformalMetric::lens();
    // R1 on conjugate events
    double min_det = 1e300, max_unit = 0.0;
    for (const auto& ev : lens_events(m, 20, 47)) {
        min_det = std::min(min_det, r1_determinant(m, kUnit, WeightSpec::attenuation(1.0), ev.first));
        max_unit = std::max(max_unit, std::abs(r1_determinant(m, kUnit, WeightSpec::unit(), ev.first)));
    }
    const bool r1 = min_det > 0.0 && max_unit <= 1e-12;

    // two conjugate blobs
    const Vec2 p1{0.0, -0.5};
    const ConjugateLocus loc = conjugate_locus(m, kUnit, p1, 720);
    const LocusVertex& v = loc.vertices[static_cast<std::size_t>(std::lround((kPi / 2 + 0.4) / (kTwoPi / 720)))];
    double e1 = 1.0, e2 = 1.0;
    bool unit_fails = false;
    if (v.t_c) {
        const AttenuatedResult res =
            attenuated_recovery(m, kUnit, {1.0, std::nullopt}, {p1, 0.05, 1.0}, {v.point, 0.05, 1.0});
        e1 = res.error1;
        e2 = res.error2;
        try {
            attenuated_recovery(m, kUnit, {0.0, std::nullopt}, {p1, 0.05, 1.0}, {v.point, 0.05, 1.0});
        } catch (const QNotContractive&) {
            unit_fails = true;
        }
    }
    const bool two = std::max(e1, e2) <= 0.3 && unit_fails;

    // null triple along the x axis of a two-lens metric
    const auto m2 = ConformalMetric::lens_pair(1.2, 0.2, {-0.45, 0.0}, {0.45, 0.0});
    const GeodesicPath axis = shoot(m2, kUnit, {kPi, 0.0}, 2e-3);
    double t1 = 0.0;
    for (const auto& s : axis.samples)
        if (s.x.x <= -0.85) t1 = s.t;
    AttenuatedOptions ao;
    ao.disk_radius = 0.2;
    const NullTripleResult nt = null_triple(m2, kUnit, {1.0, std::nullopt}, {kPi, 0.0}, t1, 0.04, ao);
    const double worst = std::max(nt.window_plus, nt.window_minus);
    const bool null3 = worst < 0.01;

    r.pass = r1 && two && null3;
    r.detail = format("R1: min det %.3g (> 0), max |det| for kappa=1 %.2g (<= 1e-12); two blobs: errors %.3f, %.3f "
                      "(<= 0.3), kappa=1 raises QNotContractive: %s; null triple: residual %.3f / %.3f of the seed "
                      "data (< 0.01)",
                      min_det, max_unit, e1, e2, unit_fails ? "yes" : "no", nt.window_plus, nt.window_minus);
    return r;
}

inline CriterionResult c11_locus_shape() {
    CriterionResult r{11, "conjugate locus shape", false, {}, 0.0};
    const ConjugateLocus loc = conjugate_locus(ConformalMetric::lens(), kUnit, {0.0, -0.5}, 256);
    const std::size_t n = loc.vertices.size();
    bool flanked = true;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& v = loc.vertices[j];
        if (!(v.t_c && v.cls == LocusClass::cusp_candidate)) continue;
        const auto& lft = loc.vertices[(j + n - 2) % n];
        const auto& rgt = loc.vertices[(j + 2) % n];
        flanked = flanked && lft.t_c && rgt.t_c && lft.cls == LocusClass::fold && rgt.cls == LocusClass::fold;
    }
    r.pass = loc.cusp_count() == 1 && flanked;
    r.detail = format("%zu cusp candidates (== 1), flanked by folds: %s, %zu defined vertices", loc.cusp_count(),
                      flanked ? "yes" : "no", loc.defined_count());
    return r;
}

inline const std::vector<std::function<CriterionResult()>>& criteria() {
    static const std::vector<std::function<CriterionResult()>> all = {
        c1_euclidean_chord, c2_constant_curvature, c3_conservation, c4_canonical_relation,
        c5_adjointness,     c6_symbol,             c7_inversion,    c8_cancellation,
        c9_artifacts,       c10_attenuated,        c11_locus_shape};
    return all;
}

}  // namespace acceptance

/// Runs criterion `id` (1-based). Exceptions count as failures.
inline CriterionResult run_criterion(int id) {
    const auto& all = acceptance::criteria();
    if (id < 1 || id > static_cast<int>(all.size())) throw InputError("no such criterion");
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
        r = all[static_cast<std::size_t>(id - 1)]();
    } catch (const std::exception& e) {
        r.id = id;
        r.name = "criterion " + std::to_string(id);
        r.pass = false;
        r.detail = std::string("raised: ") + e.what();
    }
    r.seconds = acceptance::seconds_since(t0);
    return r;
}

inline int criterion_count() { return static_cast<int>(acceptance::criteria().size()); }

}  // namespace conjray
