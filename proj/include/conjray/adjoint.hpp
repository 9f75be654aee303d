#pragma once

// Backprojection X*, the normal operator N = X*X, the Laplace-Beltrami filter
// and the artifact experiment -C Lap_g N^2 f.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/geodesic.hpp"
#include "conjray/grid.hpp"
#include "conjray/jacobi.hpp"
#include "conjray/metric.hpp"
#include "conjray/parallel.hpp"
#include "conjray/xray.hpp"

namespace conjray {

struct DirectionGrid {
    int n_dir = 256;

    explicit DirectionGrid(int n = 256) : n_dir(n) {
        if (n < 64 || n % 2 != 0) throw InputError("direction grid needs an even count >= 64");
    }
    double step() const { return kTwoPi / n_dir; }
    double theta(int j) const { return step() * j; }
};

/// For every grid node inside the disk and every direction theta_j: the
/// fan-beam coordinate of the geodesic through (x, theta_j) and the weight
/// kappa(x, theta_j). One trace from x towards theta_j gives kappa(x, theta_j)
/// and, at its exit, the entry coordinate of the opposite direction.
class FiberTable {
public:
    FiberTable() = default;
    FiberTable(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, const GridFunction& layout,
               DirectionGrid dirs = DirectionGrid{}, double h = 2e-2)
        : disk_(disk), layout_(layout.zeros_like()), dirs_(dirs), unit_(weight.is_unit()) {
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (disk.contains(layout.node(i), -1e-12)) nodes_.push_back(i);
        const std::size_t nd = static_cast<std::size_t>(dirs.n_dir);
        const std::size_t half = nd / 2;
        beta_.resize(nodes_.size() * nd);
        alpha_.resize(nodes_.size() * nd);
        if (!unit_) kappa_.resize(nodes_.size() * nd);
        const auto* att = weight.attenuation();
        const auto* custom = weight.custom();
        const bool straight = metric.is_euclidean() && !(att && att->field);
        parallel_for(nodes_.size(), [&](std::size_t k) {
            const Vec2 x = layout.node(nodes_[k]);
            for (std::size_t j = 0; j < nd; ++j) {
                const Vec2 v = metric.unit_vector(x, dirs.theta(static_cast<int>(j)));
                TraceEnd end;
                double depth = 0.0;
                if (straight) {
                    end = straight_exit(disk, x, v);
                    if (att) depth = att->constant * end.time;
                } else {
                    double prev_t = 0.0, prev_s = 0.0;
                    bool first = true;
                    end = metric.visit([&](const auto& m) {
                        return trace_to_exit<false>(m, disk, FlowState{x, v}, h, kDefaultTimeCap,
                                                    [&](double t, const FlowState& s) {
                                                        if (!att) return;
                                                        const double sg = att->sigma(s.x);
                                                        if (!first) depth += 0.5 * (t - prev_t) * (sg + prev_s);
                                                        first = false;
                                                        prev_t = t;
                                                        prev_s = sg;
                                                    });
                    });
                }
                const FanBeamCoord c = coord_of_entry(disk, end.state.x, -end.state.v);
                const std::size_t opp = (j + half) % nd;
                beta_[k * nd + opp] = static_cast<float>(c.beta);
                alpha_[k * nd + opp] = static_cast<float>(c.alpha);
                if (att) kappa_[k * nd + j] = static_cast<float>(std::exp(-depth));
                else if (custom) kappa_[k * nd + j] = static_cast<float>(custom->kappa(x, (1.0 / metric.norm(x, v)) * v));
            }
        });
    }

    const Disk& disk() const { return disk_; }
    const GridFunction& layout() const { return layout_; }
    const DirectionGrid& directions() const { return dirs_; }
    const std::vector<std::size_t>& nodes() const { return nodes_; }

    /// X*g(x) = int_{S^1} kappa(x, +-theta) g(gamma_{x,theta}) dtheta; the sign
    /// follows the orientation of g.
    GridFunction backproject(const Sinogram& g) const {
        GridFunction out = layout_.zeros_like();
        const std::size_t nd = static_cast<std::size_t>(dirs_.n_dir), half = nd / 2;
        const bool minus = g.orientation() == Orientation::minus;
        const double dth = dirs_.step();
        parallel_for(nodes_.size(), [&](std::size_t k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nd; ++j) {
                const double val = g.eval(beta_[k * nd + j], alpha_[k * nd + j]);
                if (val == 0.0) continue;
                const double w = unit_ ? 1.0 : static_cast<double>(kappa_[k * nd + (minus ? (j + half) % nd : j)]);
                acc += w * val;
            }
            out[nodes_[k]] = acc * dth;
        });
        return out;
    }

private:
    Disk disk_{};
    GridFunction layout_;
    DirectionGrid dirs_{};
    bool unit_ = true;
    std::vector<std::size_t> nodes_;
    std::vector<float> beta_, alpha_, kappa_;
};

/// One-off backprojection; builds the fiber table on the fly.
inline GridFunction backproject(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight,
                                const Sinogram& g, const GridFunction& out_layout,
                                DirectionGrid dirs = DirectionGrid{}, double h = 2e-2) {
    return FiberTable(metric, disk, weight, out_layout, dirs, h).backproject(g);
}

/// N = X*X with cached geometry on both sides.
class NormalOperator {
public:
    struct Options {
        SinogramLayout sinogram{};
        DirectionGrid dirs{};
        double ray_step = 1e-2;
        double fiber_step = 2e-2;
        Orientation orientation = Orientation::plus;
        bool cache_rays = true;  // keep ray nodes in memory (about 12 bytes per node)
    };

    NormalOperator(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight,
                   const GridFunction& layout, Options opt)
        : metric_(metric), disk_(disk), weight_(weight), opt_(opt),
          fibers_(metric, disk, weight, layout, opt.dirs, opt.fiber_step) {
        if (opt.cache_rays) rays_ = RayBundle(metric, disk, weight, opt.sinogram, opt.orientation, opt.ray_step);
    }

    NormalOperator(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight,
                   const GridFunction& layout)
        : NormalOperator(metric, disk, weight, layout, Options{}) {}

    Sinogram forward(const GridFunction& f) const {
        if (opt_.cache_rays) return rays_.apply(f);
        return conjray::forward(metric_, disk_, weight_, f, opt_.sinogram, opt_.orientation, opt_.ray_step);
    }
    GridFunction backproject(const Sinogram& g) const { return fibers_.backproject(g); }
    GridFunction apply(const GridFunction& f) const { return fibers_.backproject(forward(f)); }

    const FiberTable& fibers() const { return fibers_; }
    const Options& options() const { return opt_; }

private:
    ConformalMetric metric_;
    Disk disk_;
    WeightSpec weight_;
    Options opt_;
    RayBundle rays_;
    FiberTable fibers_;
};

template <class Field>
GridFunction normal_op(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, const Field& f,
                       const GridFunction& out_layout, NormalOperator::Options opt = {}) {
    const Sinogram s = forward(metric, disk, weight, f, opt.sinogram, opt.orientation, opt.ray_step);
    return FiberTable(metric, disk, weight, out_layout, opt.dirs, opt.fiber_step).backproject(s);
}

/// Lap_g f = c^{-1} (f_xx + f_yy), five-point stencil; the outer ring of nodes is 0.
inline GridFunction laplace_beltrami(const ConformalMetric& metric, const GridFunction& f) {
    if (f.nx() < 16 || f.ny() < 16) throw GridTooCoarse("Laplace-Beltrami needs at least 16 nodes per axis");
    GridFunction out = f.zeros_like();
    const double hx2 = f.spacing().x * f.spacing().x, hy2 = f.spacing().y * f.spacing().y;
    for (std::size_t ix = 1; ix + 1 < f.nx(); ++ix)
        for (std::size_t iy = 1; iy + 1 < f.ny(); ++iy) {
            const double lap = (f(ix + 1, iy) - 2 * f(ix, iy) + f(ix - 1, iy)) / hx2 +
                               (f(ix, iy + 1) - 2 * f(ix, iy) + f(ix, iy - 1)) / hy2;
            out(ix, iy) = lap / metric.factor(f.node(ix, iy));
        }
    return out;
}

/// <a, b> with the measure d gamma = <n, theta> d sigma_g d theta, which in
/// fan-beam coordinates is R sqrt(c(boundary)) cos(alpha) d alpha d beta.
inline double inner_dgamma(const ConformalMetric& metric, const Disk& disk, const Sinogram& a, const Sinogram& b) {
    const auto& L = a.layout();
    if (!(L == b.layout())) throw InputError("sinogram layouts differ");
    double s = 0.0;
    for (std::size_t ib = 0; ib < L.n_beta; ++ib) {
        const double jac = disk.radius * std::sqrt(metric.factor(disk.boundary_point(L.beta(ib))));
        double row = 0.0;
        for (std::size_t ia = 0; ia < L.n_alpha; ++ia) {
            const double w = (ia == 0 || ia + 1 == L.n_alpha) ? 0.5 : 1.0;
            row += w * std::cos(L.alpha(ia)) * a(ib, ia) * b(ib, ia);
        }
        s += jac * row;
    }
    return s * L.d_alpha() * L.d_beta();
}

/// <f1, f2> with dA_g = c dx dy over the grid nodes inside the disk.
inline double inner_area(const ConformalMetric& metric, const Disk& disk, const GridFunction& f1,
                         const GridFunction& f2) {
    if (!f1.same_layout(f2)) throw InputError("grid layouts differ");
    double s = 0.0;
    for (std::size_t i = 0; i < f1.size(); ++i) {
        const Vec2 p = f1.node(i);
        if (disk.contains(p)) s += metric.factor(p) * f1[i] * f2[i];
    }
    return s * f1.cell_area();
}

/// Sinogram norm with the d gamma measure.
inline double norm_dgamma(const ConformalMetric& metric, const Disk& disk, const Sinogram& a) {
    return std::sqrt(std::max(0.0, inner_dgamma(metric, disk, a, a)));
}
inline double norm_area(const ConformalMetric& metric, const Disk& disk, const GridFunction& f) {
    return std::sqrt(std::max(0.0, inner_area(metric, disk, f, f)));
}

/// Normalisation of -Lap_g N^2: the symbol of N = X*X with X* integrating over
/// the full circle of directions is 4 pi / |xi|_g, so N^2 contributes
/// 16 pi^2 / |xi|^2.
inline constexpr double kArtifactC = 1.0 / (16.0 * kPi * kPi);

/// Distance from p to a locus polyline; consecutive defined vertices further
/// apart than `max_gap` are not joined.
inline double distance_to_locus(const ConjugateLocus& loc, Vec2 p, double max_gap = 0.1) {
    double best = std::numeric_limits<double>::infinity();
    const auto& V = loc.vertices;
    const std::size_t n = V.size();
    for (std::size_t j = 0; j < n; ++j) {
        if (!V[j].t_c) continue;
        best = std::min(best, norm(p - V[j].point));
        const auto& w = V[(j + 1) % n];
        if (!w.t_c || norm(w.point - V[j].point) > max_gap) continue;
        const Vec2 d = w.point - V[j].point;
        const double len2 = dot(d, d);
        if (len2 <= 0.0) continue;
        const double s = std::clamp(dot(p - V[j].point, d) / len2, 0.0, 1.0);
        best = std::min(best, norm(p - (V[j].point + s * d)));
    }
    return best;
}

struct ArtifactOptions {
    NormalOperator::Options normal{};
    int locus_dirs = 720;
    double locus_step = 2e-3;
    double near_locus = 0.05;  // score distance threshold
    double dilation = 3.0;     // support dilation, in blob widths
    // N^2 f is cut off at the boundary of M, so its Laplacian is meaningless in
    // a thin collar there; recon and all energies use r <= interior * R.
    double interior = 0.9;
    bool per_blob = true;
};

struct BlobArtifact {
    Blob blob{};
    std::size_t locus_vertices = 0;  // defined vertices of the first conjugate locus inside M
    double energy = 0.0;             // artifact energy outside the blob's dilated support
};

struct ArtifactResult {
    GridFunction recon;
    GridFunction abs_error;
    std::vector<ConjugateLocus> loci;
    std::optional<double> localization_score;  // undefined without loci
    double outside_energy = 0.0;  // |recon - f1|^2 outside the dilated supports
    double total_energy = 0.0;    // |recon - f1|^2 over the interior
    double recon_energy = 0.0;    // |recon|^2 over the interior
    std::vector<BlobArtifact> blobs;
};

/// recon = -C Lap_g N(N f1) for a blob phantom, plus the localisation of the
/// artifacts against the conjugate loci of the blob centres.
inline ArtifactResult artifact_pipeline(const ConformalMetric& metric, const Disk& disk, const GridFunction& layout,
                                        const std::vector<Blob>& blobs, const ArtifactOptions& opt = {},
                                        const WeightSpec& weight = WeightSpec::unit()) {
    if (blobs.empty()) throw InputError("artifact experiment needs at least one blob");
    ArtifactResult res;
    const Disk inner{disk.center, opt.interior * disk.radius};
    const NormalOperator N(metric, disk, weight, layout, opt.normal);
    auto reconstruct = [&](const GridFunction& f) {
        GridFunction r = laplace_beltrami(metric, N.apply(N.apply(f)));
        r *= -kArtifactC;
        for (std::size_t i = 0; i < r.size(); ++i)
            if (!inner.contains(r.node(i))) r[i] = 0.0;
        return r;
    };
    auto outside_support = [&](Vec2 p, const Blob* only) {
        for (const auto& b : blobs) {
            if (only && &b != only) continue;
            if (norm(p - b.center) <= opt.dilation * b.width) return false;
        }
        return true;
    };
    const GridFunction f1 = blob_collection(layout, blobs, disk);
    if (opt.per_blob) {
        // N is linear: the full reconstruction is the sum of the per-blob ones
        res.recon = layout.zeros_like();
        for (const auto& b : blobs) {
            const GridFunction fk = blob_collection(layout, {b}, disk);
            const GridFunction rk = reconstruct(fk);
            BlobArtifact ba;
            ba.blob = b;
            for (std::size_t i = 0; i < layout.size(); ++i) {
                const Vec2 p = layout.node(i);
                if (!inner.contains(p) || !outside_support(p, &b)) continue;
                const double e = rk[i] - fk[i];
                ba.energy += e * e;
            }
            res.blobs.push_back(ba);
            res.recon += rk;
        }
    } else {
        res.recon = reconstruct(f1);
    }
    res.abs_error = res.recon - f1;
    for (std::size_t i = 0; i < layout.size(); ++i)
        res.abs_error[i] = inner.contains(layout.node(i)) ? std::abs(res.abs_error[i]) : 0.0;

    for (const auto& b : blobs) res.loci.push_back(conjugate_locus(metric, disk, b.center, opt.locus_dirs, opt.locus_step));
    bool any_locus = false;
    for (std::size_t k = 0; k < res.loci.size(); ++k) {
        any_locus = any_locus || res.loci[k].defined_count() > 0;
        if (k < res.blobs.size()) res.blobs[k].locus_vertices = res.loci[k].defined_count();
    }

    double near = 0.0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const Vec2 p = layout.node(i);
        if (!inner.contains(p)) continue;
        const double e2 = res.abs_error[i] * res.abs_error[i];
        res.total_energy += e2;
        res.recon_energy += res.recon[i] * res.recon[i];
        if (!outside_support(p, nullptr)) continue;
        res.outside_energy += e2;
        if (!any_locus) continue;
        double d = std::numeric_limits<double>::infinity();
        for (const auto& l : res.loci) d = std::min(d, distance_to_locus(l, p));
        if (d <= opt.near_locus) near += e2;
    }
    if (any_locus && res.outside_energy > 0.0) res.localization_score = near / res.outside_energy;
    return res;
}

/// Ring of alternating-sign blobs around a centre.
inline std::vector<Blob> blob_ring(Vec2 center, double radius, int count, double width, double amplitude = 1.0) {
    std::vector<Blob> out;
    for (int i = 0; i < count; ++i) {
        const double th = kTwoPi * i / count;
        out.push_back({center + radius * unit(th), width, (i % 2 == 0 ? 1.0 : -1.0) * amplitude});
    }
    return out;
}

}  // namespace conjray
