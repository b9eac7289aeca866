#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/expr.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/io.hpp"
#include "scaleqsd/montecarlo.hpp"
#include "scaleqsd/process.hpp"
#include "scaleqsd/qsd.hpp"
#include "scaleqsd/scale.hpp"

namespace scaleqsd {

using json = nlohmann::ordered_json;

enum class CoefficientSource { Catalog, Csv, Expression };

struct CoefficientSpec {
    CoefficientSource source = CoefficientSource::Expression;
    std::string text;  // catalog name, CSV path or expression
};

// Named coefficients, stored as expressions.
inline const std::map<std::string, std::string>& coefficient_catalog() {
    static const std::map<std::string, std::string> cat{
        {"zero", "0"},           {"one", "1"},          {"unit_downward", "-1"},
        {"ornstein_uhlenbeck", "-x"}, {"cubic_restoring", "-x^3"},
    };
    return cat;
}

struct ProcessConfig {
    ProcessKind kind = ProcessKind::SpectrallyPositiveLevy;
    std::string name = "brownian";
    LevySpec levy;
    CoefficientSpec drift{CoefficientSource::Expression, "0"};
    CoefficientSpec sigma{CoefficientSource::Expression, "1"};
    DiffusionGauge gauge = DiffusionGauge::Speed;
};

// Either [a, b] with n intervals, or a truncation [a, a + L] (n intervals)
// that is certified against [a, a + 2L] with 2n intervals.
struct GridConfig {
    double a = 0.0;
    double b = 1.0;
    std::optional<double> truncation;
    std::size_t n = 1000;

    double right() const { return truncation ? a + *truncation : b; }
};

struct ToleranceConfig {
    double series = 1e-12;
    double identity_budget = 1e-11;
    double truncation = 1e-6;
};

struct IdentityConfig {
    bool quad_precision = false;
    std::size_t max_power = 8;
};

struct McConfig {
    std::size_t paths = 100000;
    double dt = 1e-4;
    std::vector<double> times{0.5, 1.0};
    std::size_t bins = 40;
    std::optional<double> x;  // lower exit level, default a
    std::optional<double> y;  // start, default the midpoint
    std::optional<double> z;  // upper exit level, default the right end
    bool bridge_correction = true;
    bool check_dt_halving = false;
};

struct RunConfig {
    ProcessConfig process;
    GridConfig grid;
    BoundaryMode mode = BoundaryMode::AccessibleBoth;
    std::vector<double> qs{-2.0, -0.5, 0.5, 2.0};
    LadderOptions ladder;
    ToleranceConfig tolerances;
    IdentityConfig identities;
    McConfig mc;
    std::uint64_t seed = 20240501;
    std::string output_dir = "out";
    // Richardson extrapolation of λ0 over grids with spacing h, 2h, 4h.
    bool richardson_h = true;
    // Also sum the resolvent series (compute-w, identities).
    bool series = true;
    bool export_kernels = false;
};

namespace detail {

/**
 * Reads fields from one JSON object and remembers which keys were used,
 * so that leftovers can be reported as unknown with their full path.
 */
class FieldReader {
public:
    FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return obj_.contains(key);
    }
    const json& raw(const std::string& key) {
        used_.insert(key);
        return obj_.at(key);
    }
    std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_number()) fail(path(key), "expected a number");
        out = v.get<double>();
        if (!std::isfinite(out)) fail(path(key), "must be finite");
    }
    void number(const std::string& key, std::optional<double>& out) {
        if (!has(key)) return;
        double v = 0.0;
        number(key, v);
        out = v;
    }
    void count(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_number_unsigned()) fail(path(key), "expected a non-negative integer");
        out = v.get<std::size_t>();
    }
    void seed(const std::string& key, std::uint64_t& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_number_unsigned()) fail(path(key), "expected a non-negative integer");
        out = v.get<std::uint64_t>();
    }
    void flag(const std::string& key, bool& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_boolean()) fail(path(key), "expected true or false");
        out = v.get<bool>();
    }
    void text(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_string()) fail(path(key), "expected a string");
        out = v.get<std::string>();
    }
    void numbers(const std::string& key, std::vector<double>& out) {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_array()) fail(path(key), "expected an array of numbers");
        out.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(path(key) + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(v[i].get<double>());
        }
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!used_.count(it.key())) fail(path(it.key()), "unknown key '" + it.key() + "'");
        }
    }

    [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
        throw ConfigError("config field '" + field + "': " + msg);
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

inline CoefficientSpec read_coefficient(FieldReader& parent, const std::string& key, CoefficientSpec def) {
    if (!parent.has(key)) return def;
    const auto& v = parent.raw(key);
    const auto path = parent.path(key);
    if (v.is_string()) {
        auto s = v.get<std::string>();
        if (coefficient_catalog().count(s)) return {CoefficientSource::Catalog, s};
        return {CoefficientSource::Expression, s};
    }
    if (v.is_number()) return {CoefficientSource::Expression, io::format_double(v.get<double>())};
    FieldReader r(v, path);
    CoefficientSpec out;
    int given = 0;
    if (r.has("catalog")) {
        r.text("catalog", out.text);
        out.source = CoefficientSource::Catalog;
        if (!coefficient_catalog().count(out.text)) FieldReader::fail(path + ".catalog", "unknown catalog coefficient '" + out.text + "'");
        ++given;
    }
    if (r.has("csv")) {
        r.text("csv", out.text);
        out.source = CoefficientSource::Csv;
        ++given;
    }
    if (r.has("expr")) {
        r.text("expr", out.text);
        out.source = CoefficientSource::Expression;
        ++given;
    }
    r.finish();
    if (given != 1) FieldReader::fail(path, "give exactly one of 'catalog', 'csv', 'expr'");
    return out;
}

template <typename Enum>
Enum parse_enum(const std::string& field, const std::string& value, const std::vector<std::pair<std::string, Enum>>& opts) {
    std::string names;
    for (const auto& [name, e] : opts) {
        if (name == value) return e;
        names += (names.empty() ? "" : ", ") + name;
    }
    FieldReader::fail(field, "unknown value '" + value + "' (expected one of " + names + ")");
}

inline const std::vector<std::pair<std::string, BoundaryMode>>& mode_names() {
    static const std::vector<std::pair<std::string, BoundaryMode>> v{
        {"inaccessible", BoundaryMode::InaccessibleUpper},
        {"accessible_both", BoundaryMode::AccessibleBoth},
        {"accessible_kill_at_zero", BoundaryMode::AccessibleKillAtZeroOnly},
    };
    return v;
}

inline const std::vector<std::pair<std::string, DiffusionGauge>>& gauge_names() {
    static const std::vector<std::pair<std::string, DiffusionGauge>> v{
        {"speed", DiffusionGauge::Speed},
        {"scale_derivative", DiffusionGauge::ScaleDerivative},
    };
    return v;
}

inline const char* gauge_name(DiffusionGauge g) { return g == DiffusionGauge::Speed ? "speed" : "scale_derivative"; }

}  // namespace detail

inline RunConfig parse_config_json(const json& root) {
    using detail::FieldReader;
    RunConfig cfg;
    FieldReader top(root, "");

    if (top.has("process")) {
        FieldReader p(top.raw("process"), "process");
        std::string type = "levy";
        p.text("type", type);
        if (type == "levy") {
            cfg.process.kind = ProcessKind::SpectrallyPositiveLevy;
        } else if (type == "diffusion") {
            cfg.process.kind = ProcessKind::Diffusion;
        } else {
            FieldReader::fail("process.type", "unknown value '" + type + "' (expected levy, diffusion)");
        }
        cfg.process.name = type == "levy" ? "brownian" : "diffusion";
        p.text("name", cfg.process.name);
        if (cfg.process.kind == ProcessKind::SpectrallyPositiveLevy) {
            auto& l = cfg.process.levy;
            p.number("c", l.drift_c);
            p.number("sigma", l.sigma);
            p.number("jump_rate", l.jump_rate);
            p.number("jump_theta", l.jump_theta);
            if (!(l.sigma > 0.0)) FieldReader::fail("process.sigma", "must be positive");
            if (l.jump_rate < 0.0) FieldReader::fail("process.jump_rate", "must be non-negative");
            if (!(l.jump_theta > 0.0)) FieldReader::fail("process.jump_theta", "must be positive");
        } else {
            cfg.process.drift = detail::read_coefficient(p, "drift", cfg.process.drift);
            cfg.process.sigma = detail::read_coefficient(p, "sigma", cfg.process.sigma);
            std::string gauge = detail::gauge_name(cfg.process.gauge);
            p.text("gauge", gauge);
            cfg.process.gauge = detail::parse_enum("process.gauge", gauge, detail::gauge_names());
        }
        p.finish();
    }

    if (top.has("grid")) {
        FieldReader g(top.raw("grid"), "grid");
        g.number("a", cfg.grid.a);
        const bool has_b = g.has("b");
        g.number("b", cfg.grid.b);
        g.number("L", cfg.grid.truncation);
        g.count("n", cfg.grid.n);
        g.finish();
        if (has_b && cfg.grid.truncation) FieldReader::fail("grid", "give either 'b' or 'L', not both");
        if (cfg.grid.truncation && !(*cfg.grid.truncation > 0.0)) FieldReader::fail("grid.L", "must be positive");
        if (!(cfg.grid.right() > cfg.grid.a)) FieldReader::fail("grid.b", "must exceed grid.a");
        if (cfg.grid.n < 8) FieldReader::fail("grid.n", "need at least 8 intervals");
    }

    if (top.has("mode")) {
        std::string mode;
        top.text("mode", mode);
        cfg.mode = detail::parse_enum("mode", mode, detail::mode_names());
    } else if (cfg.grid.truncation) {
        cfg.mode = BoundaryMode::InaccessibleUpper;
    }
    if (cfg.grid.truncation && cfg.mode != BoundaryMode::InaccessibleUpper) {
        FieldReader::fail("mode", "a truncated grid stands in for an inaccessible upper boundary");
    }

    top.numbers("q", cfg.qs);
    if (cfg.qs.empty()) FieldReader::fail("q", "need at least one value");

    if (top.has("ladder")) {
        FieldReader l(top.raw("ladder"), "ladder");
        l.number("start", cfg.ladder.start);
        l.number("ratio", cfg.ladder.ratio);
        l.number("max", cfg.ladder.max);
        l.number("rel_tol", cfg.ladder.rel_tol);
        l.finish();
        if (!(cfg.ladder.start > 0.0)) FieldReader::fail("ladder.start", "must be positive");
        if (!(cfg.ladder.ratio > 1.0)) FieldReader::fail("ladder.ratio", "must exceed 1");
        if (!(cfg.ladder.max > cfg.ladder.start)) FieldReader::fail("ladder.max", "must exceed ladder.start");
        if (!(cfg.ladder.rel_tol > 0.0)) FieldReader::fail("ladder.rel_tol", "must be positive");
    }

    if (top.has("tolerances")) {
        FieldReader t(top.raw("tolerances"), "tolerances");
        const bool budget_given = t.has("identity_budget");
        t.number("series", cfg.tolerances.series);
        t.number("identity_budget", cfg.tolerances.identity_budget);
        t.number("truncation", cfg.tolerances.truncation);
        t.finish();
        if (!(cfg.tolerances.series > 0.0)) FieldReader::fail("tolerances.series", "must be positive");
        if (!budget_given) cfg.tolerances.identity_budget = 10.0 * cfg.tolerances.series;
        if (!(cfg.tolerances.identity_budget > 0.0)) FieldReader::fail("tolerances.identity_budget", "must be positive");
        if (!(cfg.tolerances.truncation > 0.0)) FieldReader::fail("tolerances.truncation", "must be positive");
    }

    if (top.has("identities")) {
        FieldReader i(top.raw("identities"), "identities");
        i.flag("quad_precision", cfg.identities.quad_precision);
        i.count("max_power", cfg.identities.max_power);
        i.finish();
        if (cfg.identities.max_power < 1) FieldReader::fail("identities.max_power", "must be at least 1");
    }

    if (top.has("mc")) {
        FieldReader m(top.raw("mc"), "mc");
        m.count("paths", cfg.mc.paths);
        m.number("dt", cfg.mc.dt);
        m.numbers("t", cfg.mc.times);
        m.count("bins", cfg.mc.bins);
        m.number("x", cfg.mc.x);
        m.number("y", cfg.mc.y);
        m.number("z", cfg.mc.z);
        m.flag("bridge_correction", cfg.mc.bridge_correction);
        m.flag("check_dt_halving", cfg.mc.check_dt_halving);
        m.finish();
    }

    top.seed("seed", cfg.seed);
    top.text("output_dir", cfg.output_dir);
    top.flag("richardson_h", cfg.richardson_h);
    top.flag("series", cfg.series);
    top.flag("export_kernels", cfg.export_kernels);
    top.finish();
    return cfg;
}

// Checks that also apply after command-line overrides.
inline void validate_config(const RunConfig& cfg) {
    using detail::FieldReader;
    if (cfg.mc.paths < 2) FieldReader::fail("mc.paths", "need at least 2 paths");
    if (!(cfg.mc.dt > 0.0)) FieldReader::fail("mc.dt", "must be positive");
    if (cfg.mc.bins < 1) FieldReader::fail("mc.bins", "need at least one bin");
    if (cfg.mc.times.empty() || cfg.mc.times.size() > 16) FieldReader::fail("mc.t", "give 1 to 16 times");
    for (double t : cfg.mc.times)
        if (!(t > 0.0)) FieldReader::fail("mc.t", "times must be positive");
    if (cfg.qs.empty()) FieldReader::fail("q", "need at least one value");
    if (cfg.output_dir.empty()) FieldReader::fail("output_dir", "must not be empty");
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    auto cfg = parse_config_json(root);
    validate_config(cfg);
    return cfg;
}

namespace detail {

inline json coefficient_json(const CoefficientSpec& c) {
    switch (c.source) {
        case CoefficientSource::Catalog: return json{{"catalog", c.text}};
        case CoefficientSource::Csv: return json{{"csv", c.text}};
        case CoefficientSource::Expression: return json{{"expr", c.text}};
    }
    return {};
}

}  // namespace detail

// Complete configuration with every default filled in.
inline json to_json(const RunConfig& cfg) {
    json j;
    json p;
    if (cfg.process.kind == ProcessKind::SpectrallyPositiveLevy) {
        p = {{"type", "levy"},
             {"name", cfg.process.name},
             {"c", cfg.process.levy.drift_c},
             {"sigma", cfg.process.levy.sigma},
             {"jump_rate", cfg.process.levy.jump_rate},
             {"jump_theta", cfg.process.levy.jump_theta}};
    } else {
        p = {{"type", "diffusion"},
             {"name", cfg.process.name},
             {"drift", detail::coefficient_json(cfg.process.drift)},
             {"sigma", detail::coefficient_json(cfg.process.sigma)},
             {"gauge", detail::gauge_name(cfg.process.gauge)}};
    }
    j["process"] = p;
    json g{{"a", cfg.grid.a}};
    if (cfg.grid.truncation) {
        g["L"] = *cfg.grid.truncation;
    } else {
        g["b"] = cfg.grid.b;
    }
    g["n"] = cfg.grid.n;
    j["grid"] = g;
    j["mode"] = to_string(cfg.mode);
    j["q"] = cfg.qs;
    j["ladder"] = {{"start", cfg.ladder.start},
                   {"ratio", cfg.ladder.ratio},
                   {"max", cfg.ladder.max},
                   {"rel_tol", cfg.ladder.rel_tol}};
    j["tolerances"] = {{"series", cfg.tolerances.series},
                       {"identity_budget", cfg.tolerances.identity_budget},
                       {"truncation", cfg.tolerances.truncation}};
    j["identities"] = {{"quad_precision", cfg.identities.quad_precision}, {"max_power", cfg.identities.max_power}};
    json mc{{"paths", cfg.mc.paths}, {"dt", cfg.mc.dt}, {"t", cfg.mc.times}, {"bins", cfg.mc.bins}};
    if (cfg.mc.x) mc["x"] = *cfg.mc.x;
    if (cfg.mc.y) mc["y"] = *cfg.mc.y;
    if (cfg.mc.z) mc["z"] = *cfg.mc.z;
    mc["bridge_correction"] = cfg.mc.bridge_correction;
    mc["check_dt_halving"] = cfg.mc.check_dt_halving;
    j["mc"] = mc;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["richardson_h"] = cfg.richardson_h;
    j["series"] = cfg.series;
    j["export_kernels"] = cfg.export_kernels;
    return j;
}

// ---------------------------------------------------------------------------
// Building models from a configuration

namespace detail {

inline Coefficient build_coefficient(const CoefficientSpec& spec, const std::string& field, const Grid& grid) {
    if (spec.source == CoefficientSource::Csv) {
        std::ifstream in(spec.text);
        if (!in) throw ConfigError("config field '" + field + "': cannot read CSV '" + spec.text + "'");
        std::vector<std::vector<double>> rows;
        try {
            rows = io::read_numeric_csv(in, 2);
        } catch (const Error& e) {
            throw ConfigError("config field '" + field + "': " + e.what());
        }
        std::vector<double> nodes, values;
        for (const auto& r : rows) {
            nodes.push_back(r[0]);
            values.push_back(r[1]);
        }
        if (nodes.size() < 3) throw ConfigError("config field '" + field + "': CSV needs at least 3 rows");
        auto csv_grid = std::make_shared<const Grid>(std::move(nodes));
        if (csv_grid->left_end() > grid.left_end() || csv_grid->right_end() < grid.right_end()) {
            throw ConfigError("config field '" + field + "': CSV nodes do not cover [" + io::format_double(grid.left_end()) +
                              ", " + io::format_double(grid.right_end()) + "]");
        }
        return interpolate_samples(csv_grid, std::move(values));
    }
    const std::string text =
        spec.source == CoefficientSource::Catalog ? coefficient_catalog().at(spec.text) : spec.text;
    std::shared_ptr<const CoefficientExpr> expr;
    try {
        expr = std::make_shared<const CoefficientExpr>(CoefficientExpr::parse(text));
    } catch (const Error& e) {
        throw ConfigError("config field '" + field + "': " + e.what());
    }
    try {
        expr->sample(grid);
    } catch (const ExprDomainError& e) {
        throw ConfigError("config field '" + field + "': " + e.what());
    }
    return [expr](double x) { return (*expr)(x); };
}

}  // namespace detail

inline GridPtr build_grid(const RunConfig& cfg, std::size_t refine = 1, std::size_t coarsen = 1) {
    const double length = cfg.grid.right() - cfg.grid.a;
    const std::size_t n = cfg.grid.n * refine / coarsen;
    return build_uniform_grid(cfg.grid.a, cfg.grid.a + length * static_cast<double>(refine), n,
                              cfg.grid.truncation.has_value());
}

inline ProcessModel build_model(const RunConfig& cfg, GridPtr grid) {
    const auto& p = cfg.process;
    if (p.kind == ProcessKind::SpectrallyPositiveLevy) return levy_model(p.name, p.levy, std::move(grid), cfg.mode);
    auto drift = detail::build_coefficient(p.drift, "process.drift", *grid);
    auto sigma = detail::build_coefficient(p.sigma, "process.sigma", *grid);
    return diffusion_model(p.name, std::move(drift), std::move(sigma), std::move(grid), cfg.mode, p.gauge, p.drift.text,
                           p.sigma.text);
}

inline std::unique_ptr<ScaleFamily> build_family(const RunConfig& cfg, GridPtr grid) {
    return std::make_unique<ScaleFamily>(base_kernel(build_model(cfg, std::move(grid))), cfg.tolerances.series);
}

}  // namespace scaleqsd
