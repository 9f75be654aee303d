#pragma once

// Flat `key = value` run configuration. Every key has a declared type and
// default; anything not in the schema is rejected.

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "conjray/errors.hpp"
#include "conjray/metric.hpp"

namespace conjray {

class RunConfig {
public:
    enum class Type { number, positive, count, text };

    struct Key {
        const char* name;
        Type type;
        const char* fallback;
    };

    static const std::vector<Key>& schema() {
        static const std::vector<Key> keys = {
            {"metric.kind", Type::text, "lens"},  // euclidean | lens | sphere_cap | lens_pair
            {"metric.k", Type::number, "1.2"},
            {"metric.sigma", Type::positive, "0.25"},
            {"metric.center_x", Type::number, "0"},
            {"metric.center_y", Type::number, "0"},
            {"metric.second_x", Type::number, "0.45"},  // lens_pair: second bump
            {"metric.second_y", Type::number, "0"},
            {"domain.radius", Type::positive, "1"},
            {"sinogram.n_beta", Type::count, "360"},
            {"sinogram.n_alpha", Type::count, "180"},
            {"sinogram.alpha_guard", Type::positive, "0.01"},
            {"sinogram.orientation", Type::text, "plus"},
            {"step.h", Type::positive, "0.01"},
            {"weight.sigma", Type::number, "0"},  // constant attenuation of forward data
            {"grid.n", Type::count, "201"},
            {"phantom.kind", Type::text, "blob"},  // blob | constant
            {"phantom.x", Type::number, "0"},
            {"phantom.y", Type::number, "-0.5"},
            {"phantom.width", Type::positive, "0.05"},
            {"phantom.amplitude", Type::number, "1"},
            {"subdomain.center_x", Type::number, "0"},
            {"subdomain.center_y", Type::number, "0.5"},
            {"subdomain.radius", Type::positive, "0.5"},
            {"subdomain.n_beta", Type::count, "360"},
            {"subdomain.n_alpha", Type::count, "180"},
            {"subdomain.grid_spacing", Type::positive, "0.01"},
            {"neumann.max_iter", Type::count, "30"},
            {"neumann.tol", Type::positive, "1e-4"},
            {"locus.x", Type::number, "0"},
            {"locus.y", Type::number, "-0.5"},
            {"locus.n_dirs", Type::count, "720"},
            {"locus.step", Type::positive, "0.002"},
            {"artifact.ring_radius", Type::positive, "0.55"},
            {"artifact.ring_count", Type::count, "5"},
            {"artifact.inner_blobs", Type::count, "1"},  // 0 or 1
            {"artifact.width", Type::positive, "0.03"},
            {"artifact.directions", Type::count, "360"},
            {"attenuated.sigma", Type::number, "1"},
            {"attenuated.theta", Type::number, "1.9707963267948966"},  // locus direction of the second blob
            {"output.dir", Type::text, "out"},
            {"threads", Type::number, "0"},
        };
        return keys;
    }

    RunConfig() {
        for (const auto& k : schema()) values_[k.name] = k.fallback;
    }

    /// Parses `key = value` lines; '#' starts a comment.
    void load_text(const std::string& text, const std::string& origin = "config") {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), origin + ":" + std::to_string(lineno));
        }
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        load_text(ss.str(), path);
    }

    /// `key=value` override from the command line.
    void set_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), "--set");
    }

    void set(const std::string& key, const std::string& value, const std::string& where = "") {
        const Key* k = find(key);
        if (!k) throw ConfigError(prefix(where) + "unknown key '" + key + "'");
        if (value.empty()) throw ConfigError(prefix(where) + "empty value for '" + key + "'");
        if (k->type != Type::text) {
            const double v = parse_number(key, value, where);
            if (k->type == Type::positive && !(v > 0.0))
                throw ConfigError(prefix(where) + key + " must be positive");
            if (k->type == Type::count && !(v >= 0.0 && v == std::floor(v)))
                throw ConfigError(prefix(where) + key + " must be a nonnegative integer");
        }
        values_[key] = value;
    }

    double number(const std::string& key) const { return parse_number(key, text(key), key); }
    std::size_t count(const std::string& key) const { return static_cast<std::size_t>(number(key)); }
    const std::string& text(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
        return it->second;
    }

    ConformalMetric metric() const {
        const std::string& kind = text("metric.kind");
        const Vec2 c{number("metric.center_x"), number("metric.center_y")};
        if (kind == "euclidean") return ConformalMetric::euclidean();
        if (kind == "lens") return ConformalMetric::lens(number("metric.k"), number("metric.sigma"), c);
        if (kind == "sphere_cap") return ConformalMetric::sphere_cap();
        if (kind == "lens_pair")
            return ConformalMetric::lens_pair(number("metric.k"), number("metric.sigma"), c,
                                              {number("metric.second_x"), number("metric.second_y")});
        throw ConfigError("metric.kind must be euclidean, lens, sphere_cap or lens_pair, got '" + kind + "'");
    }

    /// Lines `key = value` for every key, in schema order.
    std::string dump() const {
        std::string out;
        for (const auto& k : schema()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
        return out;
    }

private:
    static const Key* find(const std::string& key) {
        for (const auto& k : schema())
            if (key == k.name) return &k;
        return nullptr;
    }
    static std::string prefix(const std::string& where) { return where.empty() ? "" : where + ": "; }
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }
    static double parse_number(const std::string& key, const std::string& value, const std::string& where) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size() || !std::isfinite(v))
            throw ConfigError(prefix(where) + key + ": not a number: '" + value + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace conjray
