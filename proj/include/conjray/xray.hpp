#pragma once

// Weighted geodesic X-ray transform over fan-beam sinograms, the attenuation
// weight and test phantoms.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/geodesic.hpp"
#include "conjray/grid.hpp"
#include "conjray/jacobi.hpp"
#include "conjray/metric.hpp"
#include "conjray/parallel.hpp"

namespace conjray {

namespace weights {

struct Unit {};

/// kappa(x, v) = exp(-int_0^tau sigma(gamma_{x,v}(s)) ds), integrated to the exit.
struct Attenuation {
    double constant = 0.0;
    std::optional<GridFunction> field;

    double sigma(Vec2 p) const { return field ? field->eval(p) : constant; }
};

/// Arbitrary weight kappa(x, v) of a point and a g-unit direction.
struct Custom {
    std::function<double(Vec2, Vec2)> kappa;
};

}  // namespace weights

class WeightSpec {
public:
    using Kind = std::variant<weights::Unit, weights::Attenuation, weights::Custom>;

    WeightSpec() = default;
    explicit WeightSpec(Kind k) : kind_(std::move(k)) {}

    static WeightSpec unit() { return WeightSpec(weights::Unit{}); }
    static WeightSpec attenuation(double sigma) {
        if (!(sigma >= 0.0)) throw InputError("attenuation must be nonnegative");
        return WeightSpec(weights::Attenuation{sigma, std::nullopt});
    }
    static WeightSpec attenuation(GridFunction sigma) {
        for (double v : sigma.values())
            if (!(v >= 0.0)) throw InputError("attenuation must be nonnegative");
        return WeightSpec(weights::Attenuation{0.0, std::move(sigma)});
    }
    static WeightSpec custom(std::function<double(Vec2, Vec2)> k) { return WeightSpec(weights::Custom{std::move(k)}); }

    const Kind& kind() const { return kind_; }
    bool is_unit() const { return std::holds_alternative<weights::Unit>(kind_); }
    const weights::Attenuation* attenuation() const { return std::get_if<weights::Attenuation>(&kind_); }
    const weights::Custom* custom() const { return std::get_if<weights::Custom>(&kind_); }

private:
    Kind kind_{weights::Unit{}};
};

/// Analytic test fields usable wherever a GridFunction is read.
struct ConstantField {
    double value = 1.0;
    double eval(Vec2) const { return value; }
};

struct GaussianField {
    Vec2 center{};
    double width = 0.05;
    double amplitude = 1.0;
    double eval(Vec2 p) const {
        const Vec2 d = p - center;
        return amplitude * std::exp(-dot(d, d) / (2.0 * width * width));
    }
};

namespace detail {

struct RayNode {
    Vec2 x;
    Vec2 v;
    double t;
    double depth;  // optical depth accumulated from the entry point
};

/// Nodes of the ray (beta, alpha) traversed in its plus direction.
inline void ray_nodes(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, double beta,
                      double alpha, double h, std::vector<RayNode>& out) {
    out.clear();
    const auto* att = weight.attenuation();
    const FlowState s0 = entry_state(metric, disk, beta, alpha);
    metric.visit([&](const auto& m) {
        double depth = 0.0, prev_t = 0.0, prev_sigma = 0.0;
        trace_to_exit<false>(m, disk, s0, h, kDefaultTimeCap, [&](double t, const FlowState& s) {
            if (att) {
                const double sg = att->sigma(s.x);
                if (!out.empty()) depth += 0.5 * (t - prev_t) * (sg + prev_sigma);
                prev_sigma = sg;
            }
            prev_t = t;
            out.push_back({s.x, s.v, t, depth});
        });
    });
}

/// Calls emit(x, w) for every quadrature node of the ray, where w combines
/// the trapezoid weight with kappa(x, +-gamma') for the requested orientation.
template <class Emit>
void ray_quadrature(const ConformalMetric& metric, const WeightSpec& weight, Orientation o,
                    const std::vector<RayNode>& nodes, Emit&& emit) {
    const std::size_t n = nodes.size();
    if (n < 2) return;
    const double total = nodes.back().depth;
    const auto* custom = weight.custom();
    const bool att = weight.attenuation() != nullptr;
    for (std::size_t i = 0; i < n; ++i) {
        const double left = i > 0 ? nodes[i].t - nodes[i - 1].t : 0.0;
        const double right = i + 1 < n ? nodes[i + 1].t - nodes[i].t : 0.0;
        double w = 0.5 * (left + right);
        if (att) {
            // forward kappa: depth still ahead; reversed ray: depth already traversed
            w *= std::exp(-(o == Orientation::plus ? total - nodes[i].depth : nodes[i].depth));
        } else if (custom) {
            const Vec2 u = (1.0 / metric.norm(nodes[i].x, nodes[i].v)) * nodes[i].v;
            w *= custom->kappa(nodes[i].x, o == Orientation::plus ? u : -u);
        }
        emit(nodes[i].x, w);
    }
}

}  // namespace detail

/// Xf on the fan-beam grid: per ray trapezoid quadrature at the ODE nodes.
/// Orientation::minus integrates each geodesic backwards, i.e. with weight
/// kappa(x, -gamma').
template <class Field>
Sinogram forward(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, const Field& f,
                 const SinogramLayout& layout, Orientation orientation = Orientation::plus, double h = kDefaultStep) {
    Sinogram out(layout, orientation);
    parallel_for(layout.size(), [&](std::size_t idx) {
        thread_local std::vector<detail::RayNode> nodes;
        const std::size_t ib = idx / layout.n_alpha, ia = idx % layout.n_alpha;
        detail::ray_nodes(metric, disk, weight, layout.beta(ib), layout.alpha(ia), h, nodes);
        double acc = 0.0;
        detail::ray_quadrature(metric, weight, orientation, nodes, [&](Vec2 x, double w) { acc += w * f.eval(x); });
        out[idx] = acc;
    });
    return out;
}

/// Quadrature nodes of every ray of a layout, stored once so that repeated
/// transforms of different functions over the same geometry only cost the
/// interpolation of f.
class RayBundle {
public:
    RayBundle() = default;
    RayBundle(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, const SinogramLayout& layout,
              Orientation orientation, double h)
        : RayBundle(disk, layout, orientation, [&](std::size_t idx, auto&& emit) {
              thread_local std::vector<detail::RayNode> nodes;
              const std::size_t ib = idx / layout.n_alpha, ia = idx % layout.n_alpha;
              detail::ray_nodes(metric, disk, weight, layout.beta(ib), layout.alpha(ia), h, nodes);
              detail::ray_quadrature(metric, weight, orientation, nodes, emit);
          }) {}

    /// Generic form: gen(idx, emit) calls emit(x, w) for the nodes of ray idx.
    template <class Gen>
    RayBundle(const Disk& disk, const SinogramLayout& layout, Orientation orientation, Gen&& gen)
        : disk_(disk), layout_(layout), orientation_(orientation) {
        const std::size_t n = layout.size();
        std::vector<std::vector<Node>> per_ray(n);
        parallel_for(n, [&](std::size_t idx) {
            auto& dst = per_ray[idx];
            gen(idx, [&](Vec2 x, double w) {
                dst.push_back({static_cast<float>(x.x), static_cast<float>(x.y), static_cast<float>(w)});
            });
        });
        offsets_.resize(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] = offsets_[i] + per_ray[i].size();
        nodes_.reserve(offsets_.back());
        for (auto& r : per_ray) nodes_.insert(nodes_.end(), r.begin(), r.end());
    }

    const SinogramLayout& layout() const { return layout_; }
    const Disk& disk() const { return disk_; }
    Orientation orientation() const { return orientation_; }
    std::size_t node_count() const { return nodes_.size(); }

    template <class Field>
    Sinogram apply(const Field& f) const {
        Sinogram out(layout_, orientation_);
        parallel_for(layout_.size(), [&](std::size_t idx) {
            double acc = 0.0;
            for (std::size_t k = offsets_[idx]; k < offsets_[idx + 1]; ++k) {
                const Node& nd = nodes_[k];
                acc += static_cast<double>(nd.w) * f.eval({nd.x, nd.y});
            }
            out[idx] = acc;
        });
        return out;
    }

private:
    struct Node {
        float x, y, w;
    };
    Disk disk_{};
    SinogramLayout layout_{};
    Orientation orientation_ = Orientation::plus;
    std::vector<std::size_t> offsets_;
    std::vector<Node> nodes_;
};

/// Weight of the geodesic through (x, v) for a g-unit v.
inline double kappa(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight, Vec2 x, Vec2 v,
                    double h = kDefaultStep) {
    if (weight.is_unit()) return 1.0;
    if (const auto* c = weight.custom()) return c->kappa(x, v);
    const auto* att = weight.attenuation();
    if (!disk.contains(x, 1e-12)) throw InputError("kappa evaluated outside the domain");
    if (!att->field && metric.is_euclidean()) {
        return std::exp(-att->constant * straight_exit(disk, x, (1.0 / norm(v)) * v).time);
    }
    double depth = 0.0, prev_t = 0.0, prev_s = 0.0;
    bool first = true;
    metric.visit([&](const auto& m) {
        trace_to_exit<false>(m, disk, FlowState{x, v}, h, kDefaultTimeCap, [&](double t, const FlowState& s) {
            const double sg = att->sigma(s.x);
            if (!first) depth += 0.5 * (t - prev_t) * (sg + prev_s);
            first = false;
            prev_t = t;
            prev_s = sg;
        });
    });
    return std::exp(-depth);
}

/// kappa for an attenuation spec alone (sigma >= 0).
inline double attenuation_kappa(const ConformalMetric& metric, const Disk& disk, const weights::Attenuation& sigma,
                                Vec2 x, Vec2 v, double h = kDefaultStep) {
    return kappa(metric, disk, WeightSpec(sigma), x, v, h);
}

/// det [[kappa(p1, v1), kappa(p2, v2)], [kappa(p1, -v1), kappa(p2, -v2)]] with
/// the columns ordered along the flow: the first column is the conjugate point
/// reached later. Swapping the columns only flips the sign, and with this
/// order the determinant of an attenuation weight is positive.
inline double r1_determinant(const ConformalMetric& metric, const Disk& disk, const WeightSpec& weight,
                             const ConjugateEvent& ev, double h = kDefaultStep) {
    const bool in_order = ev.t1 >= ev.t2;
    const Vec2 pa = in_order ? ev.p1 : ev.p2, va = in_order ? ev.v1 : ev.v2;
    const Vec2 pb = in_order ? ev.p2 : ev.p1, vb = in_order ? ev.v2 : ev.v1;
    const double k11 = kappa(metric, disk, weight, pa, va, h);
    const double k12 = kappa(metric, disk, weight, pb, vb, h);
    const double k21 = kappa(metric, disk, weight, pa, -va, h);
    const double k22 = kappa(metric, disk, weight, pb, -vb, h);
    return k11 * k22 - k12 * k21;
}

struct Blob {
    Vec2 center{};
    double width = 0.05;
    double amplitude = 1.0;
};

inline constexpr double kBlobRadiusLimit = 0.95;

/// Sum of Gaussians sampled at the grid nodes. `domain` is the disk whose
/// radius limit the blobs must respect (scaled by kBlobRadiusLimit).
inline GridFunction blob_collection(const GridFunction& layout, const std::vector<Blob>& blobs,
                                    const Disk& domain = Disk{{0.0, 0.0}, 1.0}) {
    const double min_spacing = std::max(layout.spacing().x, layout.spacing().y);
    for (const auto& b : blobs) {
        if (!(b.width > 2.0 * min_spacing)) throw InputError("blob width must exceed two grid spacings");
        if (norm(b.center - domain.center) + 4.0 * b.width > kBlobRadiusLimit * domain.radius)
            throw BlobOutsideDomain("blob support leaves the domain");
    }
    GridFunction g = layout.zeros_like();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec2 p = g.node(i);
        double v = 0.0;
        for (const auto& b : blobs) v += GaussianField{b.center, b.width, b.amplitude}.eval(p);
        g[i] = v;
    }
    return g;
}

inline GridFunction gaussian_blob(const GridFunction& layout, Vec2 center, double width, double amplitude = 1.0,
                                  const Disk& domain = Disk{{0.0, 0.0}, 1.0}) {
    return blob_collection(layout, {Blob{center, width, amplitude}}, domain);
}

/// Samples any field with eval(Vec2) onto a grid layout.
template <class Field>
GridFunction sample(const GridFunction& layout, const Field& f) {
    GridFunction g = layout.zeros_like();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = f.eval(g.node(i));
    return g;
}

}  // namespace conjray
