// conjray: command-line driver for the geodesic X-ray experiments.
//
//   conjray <forward|locus|cancel|artifact|attenuated|selftest>
//           [--config FILE] [--set key=value ...] [--out DIR]
//
// Exit codes: 0 ok, 1 I/O failure or failed selftest, 2 configuration error,
// 3 numerical guard (NoExit, Diverged, QNotContractive, ...).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "conjray/acceptance.hpp"
#include "conjray/config.hpp"
#include "conjray/io.hpp"

using namespace conjray;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Output {
    fs::path dir;

    std::string path(const std::string& name) const { return (dir / name).string(); }

    template <class Field>
    void both(const std::string& stem, const Field& f) const {
        write_crgrid(path(stem + ".crgrid"), f);
        write_pgm(path(stem + ".pgm"), f);
    }

    void summary(const json& j) const {
        std::ofstream os(path("summary.txt"));
        for (const auto& [k, v] : j.items()) os << k << " = " << v.dump() << '\n';
        if (!os) throw IOError("cannot write " + path("summary.txt"));
    }
};

Disk domain(const RunConfig& c) { return {{0.0, 0.0}, c.number("domain.radius")}; }

SinogramLayout m_chart(const RunConfig& c) {
    SinogramLayout l;
    l.n_beta = c.count("sinogram.n_beta");
    l.n_alpha = c.count("sinogram.n_alpha");
    l.alpha_guard = c.number("sinogram.alpha_guard");
    return l;
}

SinogramLayout sub_chart(const RunConfig& c) {
    SinogramLayout l;
    l.n_beta = c.count("subdomain.n_beta");
    l.n_alpha = c.count("subdomain.n_alpha");
    l.alpha_guard = c.number("sinogram.alpha_guard");
    return l;
}

Orientation orientation(const RunConfig& c) {
    const std::string& o = c.text("sinogram.orientation");
    if (o == "plus") return Orientation::plus;
    if (o == "minus") return Orientation::minus;
    throw ConfigError("sinogram.orientation must be plus or minus");
}

Blob phantom_blob(const RunConfig& c) {
    return {{c.number("phantom.x"), c.number("phantom.y")}, c.number("phantom.width"), c.number("phantom.amplitude")};
}

InversionOptions sub_options(const RunConfig& c) {
    InversionOptions o;
    o.grid_spacing = c.number("subdomain.grid_spacing");
    o.ray_step = c.number("step.h");
    o.max_iter = static_cast<int>(c.count("neumann.max_iter"));
    o.tol = c.number("neumann.tol");
    return o;
}

json forward_cmd(const RunConfig& c, const Output& out) {
    const ConformalMetric m = c.metric();
    const Disk d = domain(c);
    const double sigma = c.number("weight.sigma");
    const WeightSpec w = sigma == 0.0 ? WeightSpec::unit() : WeightSpec::attenuation(sigma);
    Sinogram s;
    const std::string& kind = c.text("phantom.kind");
    if (kind == "constant") {
        s = forward(m, d, w, ConstantField{c.number("phantom.amplitude")}, m_chart(c), orientation(c), c.number("step.h"));
    } else if (kind == "blob") {
        const Blob b = phantom_blob(c);
        if (norm(b.center - d.center) + 4.0 * b.width > kBlobRadiusLimit * d.radius)
            throw BlobOutsideDomain("blob support leaves the domain");
        s = forward(m, d, w, GaussianField{b.center, b.width, b.amplitude}, m_chart(c), orientation(c),
                    c.number("step.h"));
    } else {
        throw ConfigError("phantom.kind must be blob or constant");
    }
    out.both("sinogram", s);
    double mx = 0.0;
    for (double v : s.values()) mx = std::max(mx, std::abs(v));
    return {{"max", mx}, {"l2", l2_norm(s)}};
}

json locus_cmd(const RunConfig& c, const Output& out) {
    const Vec2 p{c.number("locus.x"), c.number("locus.y")};
    const ConjugateLocus loc = conjugate_locus(c.metric(), domain(c), p, static_cast<int>(c.count("locus.n_dirs")),
                                               c.number("locus.step"));
    write_csv(out.path("locus.csv"), loc);
    return {{"defined", loc.defined_count()},
            {"cusps", loc.cusp_count()},
            {"folds", loc.defined_count() - loc.cusp_count()}};
}

json cancel_cmd(const RunConfig& c, const Output& out) {
    const ConformalMetric m = c.metric();
    const Disk d = domain(c);
    const Disk u{{c.number("subdomain.center_x"), c.number("subdomain.center_y")}, c.number("subdomain.radius")};
    const SimpleSubdomain u2 = make_simple_subdomain(m, u, sub_chart(c));
    CancelOptions o;
    o.m_chart = m_chart(c);
    o.m_ray_step = c.number("step.h");
    o.m_grid_spacing = 2.0 * d.radius / static_cast<double>(c.count("grid.n") - 1);
    o.locus_dirs = static_cast<int>(c.count("locus.n_dirs"));
    o.locus_step = c.number("locus.step");
    o.sub = sub_options(c);
    const CancelResult r = cancellation_pipeline(m, d, phantom_blob(c), u2, o);
    out.both("g", r.g);
    out.both("g_remap", r.g_remap);
    out.both("f1", r.f1);
    out.both("f2", r.f2);
    out.both("fdiff", r.fdiff);
    out.both("x_fdiff", r.x_fdiff);
    out.both("x_fsum", r.x_fsum);
    json j = {{"cancellation_ratio", r.cancellation_ratio},
              {"sum_ratio", r.sum_ratio},
              {"outside_change", r.outside_change},
              {"coverage", r.coverage},
              {"neumann_iterations", r.solve.iterations},
              {"neumann_converged", r.solve.converged}};
    out.summary(j);
    return j;
}

json artifact_cmd(const RunConfig& c, const Output& out) {
    const ConformalMetric m = c.metric();
    const Disk d = domain(c);
    const Vec2 centre{c.number("metric.center_x"), c.number("metric.center_y")};
    const double w = c.number("artifact.width");
    std::vector<Blob> blobs = blob_ring(centre, c.number("artifact.ring_radius"),
                                        static_cast<int>(c.count("artifact.ring_count")), w);
    if (c.count("artifact.inner_blobs") > 0) {
        blobs.push_back({centre + Vec2{-0.1, 0.1}, w, 1.0});
        blobs.push_back({centre + Vec2{0.1, -0.1}, w, -1.0});
    }
    ArtifactOptions o;
    o.normal.sinogram = m_chart(c);
    o.normal.ray_step = c.number("step.h");
    o.normal.dirs = DirectionGrid(static_cast<int>(c.count("artifact.directions")));
    o.locus_dirs = static_cast<int>(c.count("locus.n_dirs"));
    o.locus_step = c.number("locus.step");
    const GridFunction grid = GridFunction::square(c.count("grid.n"), d.center.x - d.radius, d.center.x + d.radius);
    const ArtifactResult r = artifact_pipeline(m, d, grid, blobs, o);
    out.both("recon", r.recon);
    out.both("abs_error", r.abs_error);
    write_csv(out.path("recon.csv"), r.recon);
    for (std::size_t k = 0; k < r.loci.size(); ++k) write_csv(out.path("locus_" + std::to_string(k) + ".csv"), r.loci[k]);
    json per = json::array();
    for (const auto& b : r.blobs)
        per.push_back({{"x", b.blob.center.x},
                       {"y", b.blob.center.y},
                       {"amplitude", b.blob.amplitude},
                       {"locus_vertices", b.locus_vertices},
                       {"energy", b.energy}});
    json j = {{"localization_score", r.localization_score ? json(*r.localization_score) : json(nullptr)},
              {"outside_energy", r.outside_energy},
              {"recon_energy", r.recon_energy},
              {"blobs", per}};
    out.summary(j);
    return j;
}

json attenuated_cmd(const RunConfig& c, const Output& out) {
    const ConformalMetric m = c.metric();
    const Disk d = domain(c);
    const Blob b1 = phantom_blob(c);
    const int n = static_cast<int>(c.count("locus.n_dirs"));
    const ConjugateLocus loc = conjugate_locus(m, d, b1.center, n, c.number("locus.step"));
    const double th = c.number("attenuated.theta");
    const auto j0 = static_cast<std::size_t>(std::lround(std::fmod(std::fmod(th, kTwoPi) + kTwoPi, kTwoPi) / (kTwoPi / n))) %
                    static_cast<std::size_t>(n);
    const LocusVertex& v = loc.vertices[j0];
    if (!v.t_c) throw NoConjugateOverlap("no conjugate point of the first blob in direction attenuated.theta");
    AttenuatedOptions o;
    o.m_chart = m_chart(c);
    o.m_ray_step = c.number("step.h");
    o.sub_chart = sub_chart(c);
    o.sub = sub_options(c);
    const AttenuatedResult r =
        attenuated_recovery(m, d, {c.number("attenuated.sigma"), std::nullopt}, b1, {v.point, b1.width, b1.amplitude}, o);
    out.both("f1", r.solution.f1);
    out.both("f2", r.solution.f2);
    json j = {{"blob2_x", v.point.x},
              {"blob2_y", v.point.y},
              {"error1", r.error1},
              {"error2", r.error2},
              {"terms", r.solution.terms},
              {"q_residuals", r.solution.q_residuals}};
    out.summary(j);
    return j;
}

int selftest_cmd(const std::vector<int>& only) {
    std::vector<int> ids = only;
    if (ids.empty())
        for (int i = 1; i <= criterion_count(); ++i) ids.push_back(i);
    json j = json::object();
    int failed = 0;
    for (int id : ids) {
        const CriterionResult r = run_criterion(id);
        std::printf("[%s] %2d %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str(),
                    r.seconds);
        std::fflush(stdout);
        j[std::to_string(id)] = r.pass;
        failed += !r.pass;
    }
    std::cout << json{{"criteria", j}, {"failed", failed}}.dump() << std::endl;
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conjray: geodesic X-ray transform experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::vector<std::string> sets;
    std::vector<int> only;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value configuration file");
        sub->add_option("--set", sets, "override, key=value (repeatable)");
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    };
    const std::pair<const char*, const char*> commands[] = {
        {"forward", "sinogram of the configured phantom"},
        {"locus", "conjugate locus of a point"},
        {"cancel", "two-region cancellation of singularities"},
        {"artifact", "normal-operator artifacts of a blob ring"},
        {"attenuated", "two-region recovery from attenuated data"},
    };
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));
    app.add_subcommand("selftest", "run the acceptance criteria")->add_option("--only", only, "criterion ids");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        if (cmd == "selftest") return selftest_cmd(only);

        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& s : sets) cfg.set_override(s);
        if (!out_dir.empty()) cfg.set("output.dir", out_dir);
        // CONJRAY_THREADS wins over the config
        if (!std::getenv("CONJRAY_THREADS") && cfg.number("threads") > 0)
            set_thread_count(static_cast<int>(cfg.number("threads")));

        Output out{cfg.text("output.dir")};
        std::error_code ec;
        fs::create_directories(out.dir, ec);
        if (ec) throw IOError("cannot create " + out.dir.string() + ": " + ec.message());
        {
            std::ofstream os(out.path("config.txt"));
            os << cfg.dump();
        }

        json j;
        if (cmd == "forward") j = forward_cmd(cfg, out);
        else if (cmd == "locus") j = locus_cmd(cfg, out);
        else if (cmd == "cancel") j = cancel_cmd(cfg, out);
        else if (cmd == "artifact") j = artifact_cmd(cfg, out);
        else j = attenuated_cmd(cfg, out);
        std::cout << j.dump() << std::endl;
        return 0;
    } catch (const NumericalGuardError& e) {
        std::cerr << "conjray: numerical guard " << e.guard() << ": " << e.what() << '\n';
        std::cout << json{{"error", e.guard()}}.dump() << std::endl;
        return 3;
    } catch (const InputError& e) {
        std::cerr << "conjray: configuration error: " << e.what() << '\n';
        std::cout << json{{"error", "config"}}.dump() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "conjray: " << e.what() << '\n';
        std::cout << json{{"error", "io"}}.dump() << std::endl;
        return 1;
    }
}
