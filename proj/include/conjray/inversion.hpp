#pragma once

// Approximate inversion on simple subdomains and the two experiments built on
// it: cancellation of singularities between conjugate regions, and recovery
// from two-orientation attenuated data.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <optional>
#include <vector>

#include "adjoint.hpp"

namespace conjray {

/// A disk inside M on which the geodesic flow has no conjugate points.
struct SimpleSubdomain {
    Disk disk{};
    SinogramLayout chart{};
};

/// Checks simplicity on an n_beta x n_alpha ray grid: the Jacobi field pinned
/// at the entry point must stay positive on every chord. By Sturm separation
/// that excludes conjugate pairs anywhere on the chord.
inline SimpleSubdomain make_simple_subdomain(const ConformalMetric& metric, const Disk& disk,
                                             SinogramLayout chart = {}, std::size_t n_beta = 200,
                                             std::size_t n_alpha = 60, double h = 5e-3) {
    if (!(disk.radius > 0.0)) throw InputError("subdomain radius must be positive");
    SinogramLayout probe;
    probe.n_beta = n_beta;
    probe.n_alpha = n_alpha;
    probe.alpha_guard = chart.alpha_guard;
    std::atomic<bool> bad{false};
    parallel_for(probe.size(), [&](std::size_t idx) {
        if (bad.load(std::memory_order_relaxed)) return;
        const FlowState s0 = entry_state(metric, disk, probe.beta(idx / n_alpha), probe.alpha(idx % n_alpha));
        metric.visit([&](const auto& m) {
            trace_to_exit<true>(m, disk, s0, h, kDefaultTimeCap, [&](double t, const FlowState& s) {
                if (t > 0.0 && s.b <= 0.0) bad.store(true, std::memory_order_relaxed);
            });
        });
    });
    if (bad) throw NotSimple("subdomain has conjugate points along a chord");
    return {disk, chart};
}

/// Grid with the given spacing covering the bounding box of a disk.
inline GridFunction subdomain_grid(const Disk& disk, double spacing) {
    if (!(spacing > 0.0)) throw InputError("grid spacing must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(2.0 * disk.radius / spacing - 1e-9)) + 1;
    const double half = 0.5 * spacing * static_cast<double>(n - 1);
    return GridFunction(n, n, disk.center - Vec2{half, half}, {spacing, spacing});
}

// ---------------------------------------------------------------------------
// Fiberwise Hilbert transform.

struct FanHilbert {
    Sinogram value;   // H A_- g on incoming directions
    Sinogram dalpha;  // its alpha derivative
};

/// Hilbert transform of g on each boundary fiber. The fiber at beta is the
/// full circle of directions: incoming ones carry g, outgoing ones -g of the
/// same geodesic (odd extension). The circle is resampled 4x finer than the
/// alpha grid; the outer 5% of the alpha range is tapered.
inline FanHilbert fan_hilbert(const Sinogram& g, double taper = 0.05) {
    const SinogramLayout& lay = g.layout();
    const std::size_t na = lay.n_alpha;
    std::size_t n = 16;
    while (n < 8 * na) n *= 2;  // full circle = 2 x (alpha range) at 4x resolution
    const double amax = lay.alpha_max();
    const double edge = (1.0 - taper) * amax;
    auto window = [&](double a) {
        const double x = std::abs(a);
        if (x <= edge) return 1.0;
        if (x >= amax) return 0.0;
        return 0.5 * (1.0 + std::cos(kPi * (x - edge) / (amax - edge)));
    };

    std::vector<double> line(n);
    std::vector<std::complex<double>> spec(n / 2 + 1), work(n / 2 + 1);
    std::vector<double> hv(n), hd(n);
    auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());
    auto* cwork = reinterpret_cast<fftw_complex*>(work.data());
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), line.data(), cspec, FFTW_ESTIMATE);
    fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), cwork, hv.data(), FFTW_ESTIMATE);

    FanHilbert out{Sinogram(lay, g.orientation()), Sinogram(lay, g.orientation())};
    const double dpsi = kTwoPi / static_cast<double>(n);
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib) {
        auto fiber = [&](double a) {
            const double fa = (a + amax) / lay.d_alpha();
            if (fa < 0.0 || fa > static_cast<double>(na - 1)) return 0.0;
            auto ia = std::min(static_cast<std::size_t>(fa), na - 2);
            const double t = fa - static_cast<double>(ia);
            return window(a) * ((1 - t) * g(ib, ia) + t * g(ib, ia + 1));
        };
        // psi is the direction angle relative to the outward normal
        for (std::size_t m = 0; m < n; ++m) {
            const double psi = wrap_signed(dpsi * static_cast<double>(m));
            line[m] = std::abs(psi) < kPi / 2 ? -fiber(psi) : fiber(wrap_signed(psi - kPi));
        }
        fftw_execute(fwd);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < spec.size(); ++k) {
                const double kk = static_cast<double>(k);
                // H: -i sign(k); d/dpsi H: |k|
                work[k] = pass == 0 ? std::complex<double>(0.0, -1.0) * spec[k] : kk * spec[k];
                if (k == 0 || (n % 2 == 0 && k == n / 2)) work[k] = 0.0;
                work[k] /= static_cast<double>(n);
            }
            fftw_execute_dft_c2r(inv, cwork, pass == 0 ? hv.data() : hd.data());
        }
        for (std::size_t ia = 0; ia < na; ++ia) {
            const double pos = wrap_angle(lay.alpha(ia) + kPi) / dpsi;
            auto m0 = static_cast<std::size_t>(pos);
            const double t = pos - static_cast<double>(m0);
            const std::size_t m1 = (m0 + 1) % n;
            m0 %= n;
            out.value(ib, ia) = (1 - t) * hv[m0] + t * hv[m1];
            out.dalpha(ib, ia) = (1 - t) * hd[m0] + t * hd[m1];
        }
    }
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    return out;
}

/// Central difference in beta (periodic).
inline Sinogram d_beta(const Sinogram& s) {
    const SinogramLayout& lay = s.layout();
    Sinogram out(lay, s.orientation());
    const double inv = 1.0 / (2.0 * lay.d_beta());
    for (std::size_t ib = 0; ib < lay.n_beta; ++ib) {
        const std::size_t up = (ib + 1) % lay.n_beta, dn = (ib + lay.n_beta - 1) % lay.n_beta;
        for (std::size_t ia = 0; ia < lay.n_alpha; ++ia) out(ib, ia) = (s(up, ia) - s(dn, ia)) * inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Perpendicular backprojection.

/// For each node of `layout` inside the disk and each direction theta_j: the
/// fan-beam coordinate (beta, alpha) of the geodesic through (x, theta_j) and
/// its derivative along the horizontal perpendicular field X_perp, i.e. the
/// geodesic family obtained by moving x along the g-unit normal while
/// parallel-transporting the direction.
class PerpTable {
public:
    PerpTable() = default;
    PerpTable(const ConformalMetric& metric, const Disk& disk, const GridFunction& layout,
              DirectionGrid dirs = DirectionGrid{}, double h = 1e-2)
        : disk_(disk), layout_(layout.zeros_like()), dirs_(dirs) {
        std::vector<long> slot(layout.size(), -1);
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (disk.contains(layout.node(i), -1e-12)) {
                slot[i] = static_cast<long>(nodes_.size());
                nodes_.push_back(i);
            }
        const std::size_t nd = static_cast<std::size_t>(dirs.n_dir);
        const std::size_t nn = nodes_.size();
        std::vector<double> beta(nn * nd), alpha(nn * nd);
        const bool straight = metric.is_euclidean();
        parallel_for(nn, [&](std::size_t k) {
            const Vec2 x = layout.node(nodes_[k]);
            for (std::size_t j = 0; j < nd; ++j) {
                // trace backwards: the exit of -theta_j is the entry of theta_j
                const Vec2 v = -metric.unit_vector(x, dirs.theta(static_cast<int>(j)));
                const TraceEnd end = straight ? straight_exit(disk, x, (1.0 / norm(v)) * v)
                                              : metric.visit([&](const auto& m) {
                                                    return trace_to_exit<false>(m, disk, FlowState{x, v}, h);
                                                });
                const FanBeamCoord c = coord_of_entry(disk, end.state.x, -end.state.v);
                beta[k * nd + j] = c.beta;
                alpha[k * nd + j] = c.alpha;
            }
        });

        beta_.resize(nn * nd);
        alpha_.resize(nn * nd);
        dbeta_.resize(nn * nd);
        dalpha_.resize(nn * nd);
        const std::size_t ny = layout.ny();
        const Vec2 sp = layout.spacing();
        const double dth = dirs.step();
        parallel_for(nn, [&](std::size_t k) {
            const std::size_t i = nodes_[k], ix = i / ny, iy = i % ny;
            const Vec2 x = layout.node(i);
            auto nb = [&](long dx, long dy) -> long {
                const long jx = static_cast<long>(ix) + dx, jy = static_cast<long>(iy) + dy;
                if (jx < 0 || jy < 0 || jx >= static_cast<long>(layout.nx()) || jy >= static_cast<long>(ny)) return -1;
                return slot[static_cast<std::size_t>(jx) * ny + static_cast<std::size_t>(jy)];
            };
            const long xp = nb(1, 0), xm = nb(-1, 0), yp = nb(0, 1), ym = nb(0, -1);
            const double ephi = 1.0 / std::sqrt(metric.factor(x));
            const Vec2 gphi = metric.grad_phi(x);
            for (std::size_t j = 0; j < nd; ++j) {
                const std::size_t at = k * nd + j;
                // difference of a coordinate between two table entries
                auto diff = [&](const std::vector<double>& a, long kp, long km, std::size_t jp, std::size_t jm,
                                bool angle) {
                    const std::size_t p = static_cast<std::size_t>(kp) * nd + jp, q = static_cast<std::size_t>(km) * nd + jm;
                    const double d = a[p] - a[q];
                    return angle ? wrap_signed(d) : d;
                };
                auto partial = [&](const std::vector<double>& a, long kp, long km, double step, bool angle) {
                    const long self = static_cast<long>(k);
                    if (kp >= 0 && km >= 0) return diff(a, kp, km, j, j, angle) / (2.0 * step);
                    if (kp >= 0) return diff(a, kp, self, j, j, angle) / step;
                    if (km >= 0) return diff(a, self, km, j, j, angle) / step;
                    return 0.0;
                };
                const std::size_t jp = (j + 1) % nd, jm = (j + nd - 1) % nd;
                const Vec2 u = unit(dirs.theta(static_cast<int>(j)));
                const Vec2 up{-u.y, u.x};
                const double transport = dot(u, gphi);
                for (int which = 0; which < 2; ++which) {
                    const auto& a = which == 0 ? beta : alpha;
                    const bool ang = which == 0;
                    const Vec2 grad{partial(a, xp, xm, sp.x, ang), partial(a, yp, ym, sp.y, ang)};
                    const double dpsi =
                        diff(a, static_cast<long>(k), static_cast<long>(k), jp, jm, ang) / (2.0 * dth);
                    const double xperp = ephi * (dot(up, grad) - transport * dpsi);
                    (which == 0 ? dbeta_ : dalpha_)[at] = static_cast<float>(xperp);
                }
                beta_[at] = static_cast<float>(beta[at]);
                alpha_[at] = static_cast<float>(alpha[at]);
            }
        });
    }

    const Disk& disk() const { return disk_; }
    const GridFunction& layout() const { return layout_; }
    const std::vector<std::size_t>& nodes() const { return nodes_; }
    const DirectionGrid& directions() const { return dirs_; }

    /// int_{S^1} X_perp (h o coord)(x, theta) dtheta for a sinogram h given by
    /// its two partial derivatives.
    GridFunction backproject(const Sinogram& h_beta, const Sinogram& h_alpha) const {
        GridFunction out = layout_.zeros_like();
        const std::size_t nd = static_cast<std::size_t>(dirs_.n_dir);
        const double dth = dirs_.step();
        parallel_for(nodes_.size(), [&](std::size_t k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nd; ++j) {
                const std::size_t at = k * nd + j;
                const double b = beta_[at], a = alpha_[at];
                acc += h_beta.eval(b, a) * dbeta_[at] + h_alpha.eval(b, a) * dalpha_[at];
            }
            out[nodes_[k]] = acc * dth;
        });
        return out;
    }

private:
    Disk disk_{};
    GridFunction layout_;
    DirectionGrid dirs_{};
    std::vector<std::size_t> nodes_;
    std::vector<float> beta_, alpha_, dbeta_, dalpha_;
};

inline constexpr double kMinCoverage = 0.5;

/// Filtered backprojection A = (1/4 pi) X_perp^* H A_-: exact on the euclidean
/// disk, Id + W^2 with W^2 of order -1 on a simple domain.
inline GridFunction approx_inverse(const PerpTable& table, const Sinogram& g) {
    if (g.coverage() < kMinCoverage) throw CoverageTooSparse("less than half of the chart carries data");
    const FanHilbert h = fan_hilbert(g);
    GridFunction out = table.backproject(d_beta(h.value), h.dalpha);
    out *= 1.0 / (4.0 * kPi);
    return out;
}

// ---------------------------------------------------------------------------
// Neumann series for f + W^2 f = A X f.

struct InversionOptions {
    DirectionGrid dirs{};
    double grid_spacing = 1e-2;
    double ray_step = 1e-2;
    double fiber_step = 1e-2;
    int max_iter = 30;
    double tol = 1e-4;
    Orientation orientation = Orientation::plus;
};

struct NeumannResult {
    GridFunction f;
    std::vector<double> updates;    // relative update norm per iteration
    std::vector<double> residuals;  // ||g - X f_k|| on covered cells, before each update
    int iterations = 0;
    bool converged = false;
};

/// Attenuation of the surrounding domain M. A subdomain ray is a sub-segment
/// of an M geodesic, so its weight is the M weight kappa_M, not the one of
/// the subdomain on its own.
struct Ambient {
    Disk disk{};
    weights::Attenuation sigma{};
    std::vector<std::uint8_t> minus_cells;  // per chart cell; empty = the inverter's orientation everywhere
};

/// Forward transform and approximate inverse on one simple subdomain.
class SubdomainInverter {
public:
    SubdomainInverter(const ConformalMetric& metric, const SimpleSubdomain& dom,
                      const WeightSpec& weight = WeightSpec::unit(), const InversionOptions& opt = {},
                      std::shared_ptr<const PerpTable> table = nullptr)
        : dom_(dom), opt_(opt), layout_(subdomain_grid(dom.disk, opt.grid_spacing)),
          rays_(metric, dom.disk, weight, dom.chart, opt.orientation, opt.ray_step),
          table_(table ? std::move(table) : make_table(metric)) {
        if (!weight.is_unit()) rescale(metric, dom.disk, weight);
    }

    SubdomainInverter(const ConformalMetric& metric, const SimpleSubdomain& dom, const Ambient& amb,
                      const InversionOptions& opt = {}, std::shared_ptr<const PerpTable> table = nullptr)
        : dom_(dom), opt_(opt), layout_(subdomain_grid(dom.disk, opt.grid_spacing)),
          rays_(ambient_rays(metric, dom, amb, opt)), table_(table ? std::move(table) : make_table(metric)) {
        rescale(metric, amb.disk, WeightSpec(amb.sigma));
    }

    const GridFunction& layout() const { return layout_; }
    const SimpleSubdomain& domain() const { return dom_; }
    const std::shared_ptr<const PerpTable>& table() const { return table_; }
    Orientation orientation() const { return opt_.orientation; }

    template <class Field>
    Sinogram forward(const Field& f) const { return rays_.apply(f); }

    GridFunction approx_inverse(const Sinogram& g) const {
        GridFunction out = conjray::approx_inverse(*table_, g);
        if (scale_.size())
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scale_[i];
        return out;
    }

    /// f <- f + A(g - X f), starting from f = 0.
    NeumannResult solve(const Sinogram& g) const {
        NeumannResult res;
        res.f = layout_.zeros_like();
        auto masked = [&](Sinogram s) {
            if (g.has_mask()) s.set_mask(g.mask());
            return s;
        };
        for (int it = 0; it < opt_.max_iter; ++it) {
            Sinogram r = g - masked(forward(res.f));
            res.residuals.push_back(norm_l2(r));
            const GridFunction step = approx_inverse(r);
            res.f += step;
            res.iterations = it + 1;
            const double fn = l2_norm(res.f);
            const double rel = fn > 0.0 ? l2_norm(step) / fn : 0.0;
            res.updates.push_back(rel);
            if (rel < opt_.tol) {
                res.converged = true;
                break;
            }
            const std::size_t n = res.updates.size();
            if (n >= 4 && res.updates[n - 1] > 2.0 * res.updates[n - 4] && res.updates[n - 1] > res.updates[n - 2] &&
                res.updates[n - 2] > res.updates[n - 3] && res.updates[n - 3] > res.updates[n - 4])
                throw Diverged("Neumann updates grow: W^2 is not a contraction here");
        }
        return res;
    }

private:
    static double norm_l2(const Sinogram& s) {
        double acc = 0.0;
        for (double v : s.values()) acc += v * v;
        return std::sqrt(acc);
    }

    std::shared_ptr<const PerpTable> make_table(const ConformalMetric& metric) const {
        return std::make_shared<const PerpTable>(metric, dom_.disk, layout_, opt_.dirs, opt_.fiber_step);
    }

    // A is built for kappa = 1; for weighted data rescale by the mean weight
    // over the fiber, which is the principal part of A X_kappa.
    void rescale(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight) {
        constexpr int nd = 64;
        scale_ = layout_.zeros_like();
        const auto& nodes = table_->nodes();
        parallel_for(nodes.size(), [&](std::size_t k) {
            const Vec2 x = layout_.node(nodes[k]);
            double s = 0.0;
            for (int j = 0; j < nd; ++j)
                s += kappa(metric, disk, weight, x, metric.unit_vector(x, kTwoPi * j / nd), opt_.fiber_step);
            scale_[nodes[k]] = nd / s;
        });
    }

    static RayBundle ambient_rays(const ConformalMetric& metric, const SimpleSubdomain& dom, const Ambient& amb,
                                  const InversionOptions& opt) {
        const SinogramLayout& lay = dom.chart;
        const WeightSpec w(amb.sigma);
        const double h = opt.ray_step;
        // optical depth from s to the boundary of M
        auto depth_to_exit = [&](const FlowState& s) {
            double depth = 0.0, prev_t = 0.0, prev_s = amb.sigma.sigma(s.x);
            metric.visit([&](const auto& m) {
                trace_to_exit<false>(m, amb.disk, s, h, kDefaultTimeCap, [&](double t, const FlowState& st) {
                    const double sg = amb.sigma.sigma(st.x);
                    depth += 0.5 * (t - prev_t) * (sg + prev_s);
                    prev_t = t;
                    prev_s = sg;
                });
            });
            return depth;
        };
        if (!amb.minus_cells.empty() && amb.minus_cells.size() != lay.size())
            throw InputError("orientation selector does not match the chart");
        return RayBundle(dom.disk, lay, opt.orientation, [&](std::size_t idx, auto&& emit) {
            const bool plus = amb.minus_cells.empty() ? opt.orientation == Orientation::plus : !amb.minus_cells[idx];
            thread_local std::vector<detail::RayNode> nodes;
            const double beta = lay.beta(idx / lay.n_alpha), alpha = lay.alpha(idx % lay.n_alpha);
            detail::ray_nodes(metric, dom.disk, w, beta, alpha, h, nodes);
            if (nodes.size() < 2) return;
            const FlowState s0 = entry_state(metric, dom.disk, beta, alpha);
            const double before = plus ? 0.0 : depth_to_exit({s0.x, -s0.v});
            const double after = plus ? depth_to_exit({nodes.back().x, nodes.back().v}) : 0.0;
            const double inside = nodes.back().depth;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                const double left = i > 0 ? nodes[i].t - nodes[i - 1].t : 0.0;
                const double right = i + 1 < nodes.size() ? nodes[i + 1].t - nodes[i].t : 0.0;
                const double d = plus ? after + inside - nodes[i].depth : before + nodes[i].depth;
                emit(nodes[i].x, 0.5 * (left + right) * std::exp(-d));
            }
        });
    }

    SimpleSubdomain dom_;
    InversionOptions opt_;
    GridFunction layout_;
    RayBundle rays_;
    std::shared_ptr<const PerpTable> table_;
    GridFunction scale_;
};

// ---------------------------------------------------------------------------
// Data transport from M to a subdomain.

/// M fan-beam coordinate of every ray of a subdomain chart: each subdomain ray
/// is the sub-segment of an M geodesic, found by shooting it backwards to the
/// boundary of M. Values are ray-constant, so reading g_M there transports
/// the data; rays whose M coordinate leaves the M chart are masked.
class RemapTable {
public:
    RemapTable(const ConformalMetric& metric, const Disk& m_disk, const SinogramLayout& m_chart,
               const SimpleSubdomain& dom, double h = 5e-3)
        : m_chart_(m_chart), chart_(dom.chart), beta_(dom.chart.size()), alpha_(dom.chart.size()),
          chord_(dom.chart.size()), inside_(dom.chart.size(), 1) {
        const SinogramLayout& lay = dom.chart;
        parallel_for(lay.size(), [&](std::size_t idx) {
            const FlowState s0 =
                entry_state(metric, dom.disk, lay.beta(idx / lay.n_alpha), lay.alpha(idx % lay.n_alpha));
            const TraceEnd end = metric.visit(
                [&](const auto& m) { return trace_to_exit<false>(m, m_disk, FlowState{s0.x, -s0.v}, h); });
            const FanBeamCoord c = coord_of_entry(m_disk, end.state.x, -end.state.v);
            beta_[idx] = c.beta;
            alpha_[idx] = c.alpha;
            if (std::abs(c.alpha) > m_chart.alpha_max()) inside_[idx] = 0;
            const TraceEnd out = metric.visit(
                [&](const auto& m) { return trace_to_exit<false>(m, m_disk, FlowState{s0.x, s0.v}, h); });
            chord_[idx] = out.state.x - end.state.x;
        });
    }

    /// Chord (exit - entry) of the M geodesic carrying each subdomain ray.
    const std::vector<Vec2>& chords() const { return chord_; }

    Sinogram apply(const Sinogram& g_m) const {
        if (!(g_m.layout() == m_chart_)) throw InputError("remap table built for another M chart");
        const SinogramLayout& ml = m_chart_;
        Sinogram out(chart_, g_m.orientation());
        std::vector<std::uint8_t> mask = inside_;
        for (std::size_t idx = 0; idx < chart_.size(); ++idx) {
            if (!mask[idx]) continue;
            if (g_m.has_mask()) {
                // nearest M cell decides coverage
                const auto ib = static_cast<std::size_t>(std::lround(wrap_angle(beta_[idx]) / ml.d_beta())) % ml.n_beta;
                const auto ia = static_cast<std::size_t>(std::lround((alpha_[idx] + ml.alpha_max()) / ml.d_alpha()));
                if (!g_m.covered(ib * ml.n_alpha + std::min(ia, ml.n_alpha - 1))) {
                    mask[idx] = 0;
                    continue;
                }
            }
            out[idx] = g_m.eval(beta_[idx], alpha_[idx]);
        }
        out.set_mask(std::move(mask));
        return out;
    }

private:
    SinogramLayout m_chart_, chart_;
    std::vector<double> beta_, alpha_;
    std::vector<Vec2> chord_;
    std::vector<std::uint8_t> inside_;
};

/// Chord (exit - entry) of every ray of a chart.
inline std::vector<Vec2> chart_chords(const ConformalMetric& metric, const Disk& disk, const SinogramLayout& chart,
                                      double h = 5e-3) {
    std::vector<Vec2> out(chart.size());
    parallel_for(chart.size(), [&](std::size_t idx) {
        const FlowState s0 = entry_state(metric, disk, chart.beta(idx / chart.n_alpha), chart.alpha(idx % chart.n_alpha));
        const TraceEnd end = metric.visit([&](const auto& m) { return trace_to_exit<false>(m, disk, s0, h); });
        out[idx] = end.state.x - s0.x;
    });
    return out;
}

inline Sinogram remap_data(const ConformalMetric& metric, const Disk& m_disk, const Sinogram& g_m,
                           const SimpleSubdomain& dom, double h = 5e-3) {
    return RemapTable(metric, m_disk, g_m.layout(), dom, h).apply(g_m);
}

// ---------------------------------------------------------------------------
// Cancellation of singularities: f2 = X_2^{-1} X_1 f1 on U2, f1 - f2.

struct CancelOptions {
    SinogramLayout m_chart{720, 360, 0.01};
    double m_grid_spacing = 1e-2;
    double m_ray_step = 1e-2;
    double support_widths = 3.0;  // supp f1 = disk of this many blob widths
    int locus_dirs = 360;
    double locus_step = 2e-3;
    double window_step = 5e-3;  // step for the Jacobi scan of the window
    InversionOptions sub{};
};

struct CancelResult {
    GridFunction f1, f2, fdiff;  // on the M grid; f2 vanishes outside U2
    Sinogram g, g_remap, x_fdiff, x_fsum;
    std::vector<std::uint8_t> window;  // M chart cells carrying a conjugate pair f1 <-> U2
    double coverage = 0.0;             // of the U2 chart by remapped data
    double cancellation_ratio = 0.0;   // ||X fdiff|| / ||X f1|| on the window
    double sum_ratio = 0.0;            // same with f1 + f2
    double outside_change = 0.0;       // relative change of ||X .|| off the window
    NeumannResult solve;
    ConjugateLocus locus;
};

namespace detail {

/// L2 norm over chart cells with the d gamma weight cos(alpha); `sel`
/// selects cells (1 = in, 0 = out) and `want` which ones to sum.
inline double chart_norm(const Sinogram& s, const std::vector<std::uint8_t>& sel, std::uint8_t want) {
    const SinogramLayout& l = s.layout();
    double acc = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (sel[i] != want) continue;
        acc += std::cos(l.alpha(i % l.n_alpha)) * s[i] * s[i];
    }
    return std::sqrt(acc);
}

}  // namespace detail

/// Rays of the M chart that pass through the disk `src` and meet a point
/// conjugate to their passage through it inside `dst`.
inline std::vector<std::uint8_t> conjugate_window(const ConformalMetric& metric, const Disk& m_disk,
                                                  const SinogramLayout& chart, const Disk& src, const Disk& dst,
                                                  double h = 5e-3) {
    std::vector<std::uint8_t> win(chart.size(), 0);
    parallel_for(chart.size(), [&](std::size_t idx) {
        const GeodesicPath path =
            shoot(metric, m_disk, {chart.beta(idx / chart.n_alpha), chart.alpha(idx % chart.n_alpha)}, h);
        double best = std::numeric_limits<double>::infinity(), t1 = 0.0;
        for (const auto& s : path.samples) {
            const double d = norm(s.x - src.center);
            if (d < best) best = d, t1 = s.t;
        }
        if (best > src.radius) return;
        const ScalarJacobiPair pair = integrate_jacobi(metric, path);
        for (double t2 : conjugate_times(pair, t1))
            if (dst.contains(sample_path(path, t2).x)) {
                win[idx] = 1;
                return;
            }
    });
    return win;
}

/// The cancellation experiment: X(f1 - f2) loses the singularities that f1
/// and its conjugate image f2 in U2 share.
inline CancelResult cancellation_pipeline(const ConformalMetric& metric, const Disk& m_disk, const Blob& blob,
                                          const SimpleSubdomain& u2, const CancelOptions& opt = {}) {
    CancelResult res;
    res.locus = conjugate_locus(metric, m_disk, blob.center, opt.locus_dirs, opt.locus_step);
    bool meets = false;
    for (const auto& v : res.locus.vertices) meets = meets || (v.t_c && u2.disk.contains(v.point));
    if (!meets) throw NoConjugateOverlap("conjugate locus of the blob centre misses U2");

    const GridFunction m_grid = subdomain_grid(m_disk, opt.m_grid_spacing);
    res.f1 = blob_collection(m_grid, {blob}, m_disk);
    const GaussianField f1{blob.center, blob.width, blob.amplitude};
    res.g = forward(metric, m_disk, WeightSpec::unit(), f1, opt.m_chart, Orientation::plus, opt.m_ray_step);
    res.g_remap = remap_data(metric, m_disk, res.g, u2, opt.window_step);
    res.coverage = res.g_remap.coverage();

    const SubdomainInverter inv(metric, u2, WeightSpec::unit(), opt.sub);
    res.solve = inv.solve(res.g_remap);
    res.f2 = m_grid.zeros_like();
    for (std::size_t i = 0; i < m_grid.size(); ++i) {
        const Vec2 p = m_grid.node(i);
        if (u2.disk.contains(p)) res.f2[i] = res.solve.f.eval(p);
    }
    res.fdiff = res.f1 - res.f2;

    const RayBundle rays(metric, m_disk, WeightSpec::unit(), opt.m_chart, Orientation::plus, opt.m_ray_step);
    res.x_fdiff = rays.apply(res.fdiff);
    res.x_fsum = rays.apply(res.f1 + res.f2);
    const Sinogram x_f1 = rays.apply(res.f1);

    const Disk src{blob.center, opt.support_widths * blob.width};
    res.window = conjugate_window(metric, m_disk, opt.m_chart, src, u2.disk, opt.window_step);
    const double base_in = detail::chart_norm(x_f1, res.window, 1);
    const double base_out = detail::chart_norm(x_f1, res.window, 0);
    if (base_in == 0.0) throw NoConjugateOverlap("no ray carries a conjugate pair between f1 and U2");
    res.cancellation_ratio = detail::chart_norm(res.x_fdiff, res.window, 1) / base_in;
    res.sum_ratio = detail::chart_norm(res.x_fsum, res.window, 1) / base_in;
    res.outside_change = std::abs(detail::chart_norm(res.x_fdiff, res.window, 0) - base_out) / base_out;
    return res;
}

// ---------------------------------------------------------------------------
// Attenuated recovery from the two orientations.

struct AttenuatedOptions {
    SinogramLayout m_chart{360, 180, 0.01};
    double m_ray_step = 1e-2;
    SinogramLayout sub_chart{240, 120, 0.01};
    InversionOptions sub{};
    double disk_radius = 0.35;  // initial radius of the disks D_k around the regions
    double shrink = 0.8;        // radius factor per failed simplicity check
    int max_terms = 20;         // Neumann terms in Q
    double tol = 1e-3;          // stop once ||Q^n b|| / ||b|| is below this
    double stall = 1e-2;        // residual level that signals |sigma_p(Q)| >= 1
    double remap_step = 5e-3;
};

/// Largest simple disk around `center` of radius <= r0 inside M, shrinking
/// by `shrink` until the simplicity check passes.
inline SimpleSubdomain simple_disk_around(const ConformalMetric& metric, const Disk& m_disk, Vec2 center,
                                          const AttenuatedOptions& opt) {
    double r = std::min(opt.disk_radius, m_disk.radius - norm(center - m_disk.center) - 0.02);
    while (r >= 0.05) {
        try {
            return make_simple_subdomain(metric, {center, r}, opt.sub_chart);
        } catch (const NotSimple&) {
            r *= opt.shrink;
        }
    }
    throw NotSimple("no simple disk around the region");
}

/// The microlocal parametrices X_{+-,k}^{-1} and transforms X_{+-} of the
/// regions D_k inside M for one attenuation.
///
/// Microlocally the system lives on a neighbourhood of one oriented geodesic.
/// Every line is therefore given the orientation whose M chord points along
/// `axis`; "plus" data is the transform with kappa(x, v) for v along that
/// orientation and "minus" the one with kappa(x, -v). Each line then carries
/// one value per equation, whichever way a chart cell traverses it.
class RegionSystem {
public:
    RegionSystem(const ConformalMetric& metric, const Disk& m_disk, const weights::Attenuation& sigma,
                 const std::vector<Vec2>& centers, Vec2 axis, const AttenuatedOptions& opt = {})
        : m_chart_(opt.m_chart) {
        const std::vector<Vec2> chords = chart_chords(metric, m_disk, opt.m_chart, opt.remap_step);
        m_along_.resize(chords.size());
        for (std::size_t i = 0; i < chords.size(); ++i) m_along_[i] = dot(chords[i], axis) > 0.0;
        const WeightSpec w(sigma);
        for (int o = 0; o < 2; ++o) {
            const bool plus = o == 0;
            fwd_[o] = std::make_unique<RayBundle>(m_disk, opt.m_chart, orient(o), [&](std::size_t idx, auto&& emit) {
                thread_local std::vector<detail::RayNode> nodes;
                const SinogramLayout& l = opt.m_chart;
                detail::ray_nodes(metric, m_disk, w, l.beta(idx / l.n_alpha), l.alpha(idx % l.n_alpha), opt.m_ray_step,
                                  nodes);
                const bool cell_plus = plus == static_cast<bool>(m_along_[idx]);
                detail::ray_quadrature(metric, w, cell_plus ? Orientation::plus : Orientation::minus, nodes, emit);
            });
        }
        for (Vec2 c : centers) {
            Region reg{simple_disk_around(metric, m_disk, c, opt), {}, nullptr};
            reg.remap = std::make_unique<RemapTable>(metric, m_disk, opt.m_chart, reg.dom, opt.remap_step);
            std::shared_ptr<const PerpTable> table;
            for (int o = 0; o < 2; ++o) {
                Ambient amb{m_disk, sigma, {}};
                const auto& ch = reg.remap->chords();
                amb.minus_cells.resize(ch.size());
                for (std::size_t i = 0; i < ch.size(); ++i) amb.minus_cells[i] = (dot(ch[i], axis) > 0.0) == (o == 1);
                InversionOptions io = opt.sub;
                io.orientation = orient(o);
                reg.inv[o] = std::make_unique<SubdomainInverter>(metric, reg.dom, amb, io, table);
                table = reg.inv[o]->table();
            }
            regions_.push_back(std::move(reg));
        }
    }

    std::size_t size() const { return regions_.size(); }
    const SimpleSubdomain& domain(std::size_t k) const { return regions_.at(k).dom; }
    const GridFunction& layout(std::size_t k) const { return regions_.at(k).inv[0]->layout(); }
    const SinogramLayout& m_chart() const { return m_chart_; }

    /// Rearranges ordinary plus/minus M data into the two equations.
    Sinogram equation_data(Orientation o, const Sinogram& g_plus, const Sinogram& g_minus) const {
        if (g_plus.orientation() != Orientation::plus || g_minus.orientation() != Orientation::minus)
            throw InputError("expected plus and minus oriented data");
        Sinogram out(m_chart_, o);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = ((o == Orientation::plus) == static_cast<bool>(m_along_[i])) ? g_plus[i] : g_minus[i];
        return out;
    }

    /// X_{o,k}^{-1} g: transport M data to D_k and solve there.
    GridFunction invert(std::size_t k, Orientation o, const Sinogram& g) const {
        const Region& r = regions_.at(k);
        return r.inv[idx(o)]->solve(r.remap->apply(g)).f;
    }
    /// X_o f on the M chart for f on a region grid.
    Sinogram forward(Orientation o, const GridFunction& f) const { return fwd_[idx(o)]->apply(f); }

private:
    static Orientation orient(int o) { return o == 0 ? Orientation::plus : Orientation::minus; }
    static int idx(Orientation o) { return o == Orientation::plus ? 0 : 1; }

    struct Region {
        SimpleSubdomain dom;
        std::unique_ptr<SubdomainInverter> inv[2];
        std::unique_ptr<RemapTable> remap;
    };
    SinogramLayout m_chart_;
    std::vector<std::uint8_t> m_along_;
    std::vector<Region> regions_;
    std::unique_ptr<RayBundle> fwd_[2];
};

struct TwoRegionSolution {
    GridFunction f1, f2;              // on the grids of D_1, D_2
    std::vector<double> q_residuals;  // ||Q^n b|| / ||b||
    int terms = 0;
};

/// Solves g_+- = X_{+-,1} f1 + X_{+-,2} f2 for (f1, f2) supported in regions
/// 0 and 1 of `sys`:
///   (Id - Q) f1 = X_{+,1}^{-1}(g_+ - X_{+,2} X_{-,2}^{-1} g_-),
///   Q = X_{+,1}^{-1} X_{+,2} X_{-,2}^{-1} X_{-,1},
/// by the Neumann series in Q, then f2 = X_{-,2}^{-1}(g_- - X_{-,1} f1).
inline TwoRegionSolution solve_two_regions(const RegionSystem& sys, const Sinogram& g_plus, const Sinogram& g_minus,
                                           const AttenuatedOptions& opt = {}) {
    // g_plus, g_minus: the two equations (RegionSystem::equation_data)
    constexpr auto P = Orientation::plus, Mi = Orientation::minus;
    auto Q = [&](const GridFunction& f) { return sys.invert(0, P, sys.forward(P, sys.invert(1, Mi, sys.forward(Mi, f)))); };
    const GridFunction b = sys.invert(0, P, g_plus - sys.forward(P, sys.invert(1, Mi, g_minus)));
    TwoRegionSolution out;
    out.f1 = b;
    const double bn = l2_norm(b);
    GridFunction term = b;
    out.terms = 1;
    if (bn > 0.0) {
        for (int n = 1; n < opt.max_terms; ++n) {
            term = Q(term);
            out.f1 += term;
            out.terms = n + 1;
            const double res = l2_norm(term) / bn;
            out.q_residuals.push_back(res);
            if (res < opt.tol) break;
            // three successive contraction factors above 0.8 while still above
            // the stall level: the series is not geometric
            const std::size_t m = out.q_residuals.size();
            if (m >= 4 && res > opt.stall) {
                bool slow = true;
                for (std::size_t j = m - 3; j < m; ++j) slow = slow && out.q_residuals[j] > 0.8 * out.q_residuals[j - 1];
                if (slow) throw QNotContractive("Q series stalls: |sigma_p(Q)| is not below 1");
            }
        }
        if (out.q_residuals.empty() || out.q_residuals.back() > opt.stall)
            throw QNotContractive("Q series did not converge within the term limit");
    }
    out.f2 = sys.invert(1, Mi, g_minus - sys.forward(Mi, out.f1));
    return out;
}

struct AttenuatedResult {
    SimpleSubdomain d1, d2;
    TwoRegionSolution solution;
    double error1 = 0.0, error2 = 0.0;  // relative L2 on D_k against the phantom
};

/// Two blobs, data in both orientations, recovery of both.
inline AttenuatedResult attenuated_recovery(const ConformalMetric& metric, const Disk& m_disk,
                                            const weights::Attenuation& sigma, const Blob& b1, const Blob& b2,
                                            const AttenuatedOptions& opt = {}) {
    // the equations live on the lines oriented from D_2 towards D_1, along
    // which Q contracts by exp(-2 int sigma) for a positive attenuation
    const RegionSystem sys(metric, m_disk, sigma, {b1.center, b2.center}, b1.center - b2.center, opt);
    const GaussianField p1{b1.center, b1.width, b1.amplitude}, p2{b2.center, b2.width, b2.amplitude};
    auto data = [&](Orientation o) {
        const WeightSpec w(sigma);
        return forward(metric, m_disk, w, p1, opt.m_chart, o, opt.m_ray_step) +
               forward(metric, m_disk, w, p2, opt.m_chart, o, opt.m_ray_step);
    };
    const Sinogram gp = data(Orientation::plus), gm = data(Orientation::minus);
    AttenuatedResult res{sys.domain(0), sys.domain(1),
                         solve_two_regions(sys, sys.equation_data(Orientation::plus, gp, gm),
                                           sys.equation_data(Orientation::minus, gp, gm), opt)};
    auto error = [&](const GridFunction& rec, const GaussianField& truth, const Disk& d) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            const Vec2 p = rec.node(i);
            if (!d.contains(p)) continue;
            const double t = truth.eval(p);
            num += (rec[i] - t) * (rec[i] - t);
            den += t * t;
        }
        return std::sqrt(num / den);
    };
    res.error1 = error(res.solution.f1, p1, res.d1.disk);
    res.error2 = error(res.solution.f2, p2, res.d2.disk);
    return res;
}


// ---------------------------------------------------------------------------
// Null directions from triple conjugacy.

struct NullTripleResult {
    Vec2 p1{}, p2{}, p3{};  // p1 and its first two conjugate points
    SimpleSubdomain d1, d2;
    TwoRegionSolution solution;
    double seed_norm = 0.0;
    // ||X(f1 + f2 + f3)|| / ||X f3|| per equation, over all lines and over
    // the lines meeting all three blobs
    double global_plus = 0.0, global_minus = 0.0;
    double window_plus = 0.0, window_minus = 0.0;
};

/// Seeds f3 at the second conjugate point of p1 = gamma(t1) on the geodesic
/// launched at `launch`, and solves for (f1, f2) near p1 and its first
/// conjugate point so that both transforms of f1 + f2 + f3 vanish.
inline NullTripleResult null_triple(const ConformalMetric& metric, const Disk& m_disk,
                                    const weights::Attenuation& sigma, FanBeamCoord launch, double t1,
                                    double width = 0.04, const AttenuatedOptions& opt = {}) {
    const GeodesicPath path = shoot(metric, m_disk, launch, 2e-3);
    const auto ts = conjugate_times(integrate_jacobi(metric, path), t1);
    if (ts.size() < 2) throw NoConjugateOverlap("fewer than two conjugate points along the geodesic");
    NullTripleResult res;
    res.p1 = sample_path(path, t1).x;
    res.p2 = sample_path(path, ts[0]).x;
    res.p3 = sample_path(path, ts[1]).x;
    const RegionSystem sys(metric, m_disk, sigma, {res.p1, res.p2}, res.p1 - res.p2, opt);
    res.d1 = sys.domain(0);
    res.d2 = sys.domain(1);
    const GaussianField f3{res.p3, width, 1.0};
    const WeightSpec w(sigma);
    const Sinogram gp = forward(metric, m_disk, w, f3, opt.m_chart, Orientation::plus, opt.m_ray_step);
    const Sinogram gm = forward(metric, m_disk, w, f3, opt.m_chart, Orientation::minus, opt.m_ray_step);
    const Sinogram ep = sys.equation_data(Orientation::plus, gp, gm);
    const Sinogram em = sys.equation_data(Orientation::minus, gp, gm);
    res.seed_norm = std::hypot(l2_norm(ep), l2_norm(em));
    res.solution = solve_two_regions(sys, -1.0 * ep, -1.0 * em, opt);
    const Sinogram rp = sys.forward(Orientation::plus, res.solution.f1) +
                        sys.forward(Orientation::plus, res.solution.f2) + ep;
    const Sinogram rm = sys.forward(Orientation::minus, res.solution.f1) +
                        sys.forward(Orientation::minus, res.solution.f2) + em;

    // lines passing within 3 widths of all three points
    const SinogramLayout& l = opt.m_chart;
    std::vector<std::uint8_t> win(l.size(), 0), all(l.size(), 1);
    parallel_for(l.size(), [&](std::size_t i) {
        const GeodesicPath p = shoot(metric, m_disk, {l.beta(i / l.n_alpha), l.alpha(i % l.n_alpha)}, opt.m_ray_step);
        bool hit[3] = {false, false, false};
        const Vec2 c[3] = {res.p1, res.p2, res.p3};
        for (const auto& s : p.samples)
            for (int k = 0; k < 3; ++k) hit[k] = hit[k] || norm(s.x - c[k]) < 3.0 * width;
        win[i] = hit[0] && hit[1] && hit[2];
    });
    auto ratio = [](const Sinogram& r, const Sinogram& e, const std::vector<std::uint8_t>& sel) {
        const double d = detail::chart_norm(e, sel, 1);
        return d > 0.0 ? detail::chart_norm(r, sel, 1) / d : 0.0;
    };
    res.global_plus = ratio(rp, ep, all);
    res.global_minus = ratio(rm, em, all);
    res.window_plus = ratio(rp, ep, win);
    res.window_minus = ratio(rm, em, win);
    return res;
}

}  // namespace conjray
