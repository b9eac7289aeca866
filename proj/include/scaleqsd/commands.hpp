#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scaleqsd/config.hpp"
#include "scaleqsd/identities.hpp"
#include "scaleqsd/montecarlo.hpp"
#include "scaleqsd/qsd.hpp"
#include "scaleqsd/scale.hpp"

namespace scaleqsd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvariant = 2;
inline constexpr int kExitInconclusive = 3;
inline constexpr int kExitConfig = 4;

class OutputDir {
public:
    explicit OutputDir(std::string dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    void write(const std::string& name, const std::string& content) {
        io::write_text_file((std::filesystem::path(dir_) / name).string(), content);
        files_.push_back(name);
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    const std::string& dir() const noexcept { return dir_; }
    const std::vector<std::string>& files() const noexcept { return files_; }

private:
    std::string dir_;
    std::vector<std::string> files_;
};

struct CommandResult {
    json summary;
    int exit_code = kExitOk;
};

/**
 * Grid and family for a configuration. Truncated grids [a, a+L] come with
 * the doubled truncation [a, a+2L] at the same spacing; `coarsen` divides
 * the node count for Richardson extrapolation in h.
 */
struct Workspace {
    RunConfig cfg;
    GridPtr grid;
    std::unique_ptr<ScaleFamily> fam;
    GridPtr long_grid;
    std::unique_ptr<ScaleFamily> longer;

    explicit Workspace(const RunConfig& c, std::size_t coarsen = 1) : cfg(c) {
        grid = build_grid(cfg, 1, coarsen);
        fam = build_family(cfg, grid);
        if (cfg.grid.truncation) {
            long_grid = build_grid(cfg, 2, coarsen);
            longer = build_family(cfg, long_grid);
        }
    }

    bool truncated() const { return longer != nullptr; }
    // Family on which ℓ-limit quantities are evaluated.
    const ScaleFamily& work() const { return longer ? *longer : *fam; }
    std::size_t last() const { return fam->size() - 1; }
};

namespace detail {

inline std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<double>>& cols) {
    std::ostringstream out;
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    const std::size_t rows = cols.empty() ? 0 : cols.front().size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << io::format_double(cols[c][r]);
        out << '\n';
    }
    return out.str();
}

inline std::vector<double> node_column(const Grid& g) { return {g.nodes().begin(), g.nodes().end()}; }

inline std::string q_label(double q) { return "q=" + io::format_double(q); }

inline json delta_json(const std::string& quantity, double short_v, double long_v, double tol) {
    const double abs_d = std::abs(long_v - short_v);
    const double rel_d = abs_d / std::max(std::abs(long_v), std::numeric_limits<double>::min());
    return {{"quantity", quantity},
            {"short", short_v},
            {"long", long_v},
            {"abs_delta", abs_d},
            {"rel_delta", rel_d},
            {"within_tolerance", rel_d <= tol}};
}

inline json boundary_json(const BoundaryClass& b) {
    return {{"kind", to_string(b.kind)},
            {"integral", b.integral_value},
            {"integral_short", b.integral_short},
            {"growth", b.growth},
            {"sensitivity", b.sensitivity},
            {"sup_mean_exit_time", b.sup_mean_exit_time}};
}

inline json prefixes_json(const std::vector<PrefixThreshold>& ps) {
    json arr = json::array();
    for (const auto& p : ps) {
        arr.push_back({{"length", p.length},
                       {"lambda", p.lambda},
                       {"uncertainty", p.uncertainty},
                       {"resolved", p.resolved}});
    }
    return arr;
}

inline BoundaryClass classify(const Workspace& ws) {
    if (ws.truncated()) return classify_boundary(*ws.fam, *ws.longer);
    return classify_boundary(*ws.fam, ws.cfg.mode);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline CommandResult run_compute_w(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    const auto& g = *ws.grid;
    const std::size_t last = ws.last();
    CommandResult res;
    res.summary["command"] = "compute-w";
    res.summary["nodes"] = g.size();
    std::vector<std::string> header{"node"};
    std::vector<std::vector<double>> cols{detail::node_column(g)};
    json entries = json::array();
    const auto model = build_model(cfg, ws.grid);
    for (std::size_t k = 0; k < cfg.qs.size(); ++k) {
        const double q = cfg.qs[k];
        auto w = ws.fam->wq(q);
        auto row = w->row(0);
        header.push_back("W_" + detail::q_label(q));
        cols.emplace_back(row.begin(), row.end());
        json e{{"q", q}, {"w_a_b", row[last]}};
        if (cfg.series) {
            auto s = scale_q_series(*ws.fam, q);
            e["series_terms"] = s.terms;
            e["tail_bound"] = s.tail_bound;
            e["max_rel_deviation"] = max_rel_deviation(s.kernel, *w);
        }
        if (model.kind == ProcessKind::SpectrallyPositiveLevy) {
            const double exact = closed_form_wq(model, q, g.right_end() - g.left_end());
            e["closed_form"] = exact;
            e["closed_form_rel_error"] = std::abs(row[last] - exact) / std::abs(exact);
        }
        if (ws.truncated()) {
            const double long_v = (*ws.longer->wq(q))(0, last);
            e["truncation"] = detail::delta_json("W^(q)(a,L)", row[last], long_v, cfg.tolerances.truncation);
        }
        if (cfg.export_kernels) {
            std::ostringstream kcsv;
            write_kernel_csv(kcsv, *w);
            out.write("w_kernel_" + std::to_string(k) + ".csv", kcsv.str());
        }
        entries.push_back(std::move(e));
    }
    res.summary["scale_functions"] = entries;
    out.write("w_rows.csv", detail::csv_table(header, cols));
    out.write_json("compute_w.json", res.summary);
    return res;
}

inline CommandResult run_z(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    const auto& g = *ws.grid;
    const std::size_t last = ws.last();
    CommandResult res;
    res.summary["command"] = "z";
    res.summary["z_ref"] = g[last];
    std::vector<std::string> header{"node"};
    std::vector<std::vector<double>> cols{detail::node_column(g)};
    json entries = json::array();
    for (double q : cfg.qs) {
        auto from_kernel = z_q(*ws.fam, q, last);
        auto marched = z_q_volterra(*ws.fam, q, last);
        double dev = 0.0;
        for (std::size_t i = 0; i <= last; ++i) {
            dev = std::max(dev, std::abs(from_kernel.values[i] - marched.values[i]) /
                                    std::max(1.0, std::abs(marched.values[i])));
        }
        header.push_back("Z_" + detail::q_label(q));
        cols.push_back(marched.values);
        json e{{"q", q}, {"z_a", marched.values[0]}, {"max_method_deviation", dev}};
        if (ws.truncated()) {
            const double long_v = z_q_volterra(*ws.longer, q, ws.longer->size() - 1).values[0];
            e["truncation"] = detail::delta_json("Z^(q)(a,ℓ)", marched.values[0], long_v, cfg.tolerances.truncation);
        }
        entries.push_back(std::move(e));
    }
    res.summary["z_functions"] = entries;
    out.write("z_rows.csv", detail::csv_table(header, cols));
    out.write_json("z.json", res.summary);
    return res;
}

// ---------------------------------------------------------------------------

struct HExtrapolation {
    std::vector<double> spacings;  // h, 2h, 4h
    std::vector<double> values;
    double order = 0.0;
    double value = 0.0;
    bool applied = false;
};

/**
 * Richardson extrapolation from values at spacings h, 2h, 4h with the
 * convergence order observed from the three values (snapped to 1 or 2 when
 * within 0.3). Not applied unless the differences contract monotonically.
 */
inline HExtrapolation richardson_three(std::vector<double> spacings, std::vector<double> values) {
    HExtrapolation r{std::move(spacings), std::move(values)};
    r.value = r.values[0];
    const double d_fine = r.values[0] - r.values[1];
    const double d_coarse = r.values[1] - r.values[2];
    if (d_fine == 0.0 || d_coarse == 0.0) return r;
    const double ratio = d_coarse / d_fine;
    if (!(ratio > 1.5 && ratio < 16.0)) return r;
    double p = std::log2(ratio);
    for (double snap : {1.0, 2.0})
        if (std::abs(p - snap) < 0.3) p = snap;
    r.order = p;
    r.value = r.values[0] + d_fine / (std::pow(2.0, p) - 1.0);
    r.applied = true;
    return r;
}

inline json decay_json(const DecayResult& d) {
    return {{"value", d.value},
            {"method", d.method},
            {"caveat", d.caveat},
            {"no_qsd", d.no_qsd},
            {"positivity_scan", d.scan_value},
            {"scan_consistent", d.scan_consistent},
            {"prefixes", detail::prefixes_json(d.prefixes)}};
}

inline CommandResult run_lambda0(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    CommandResult res;
    res.summary["command"] = "lambda0";
    const auto boundary = detail::classify(ws);
    res.summary["boundary"] = detail::boundary_json(boundary);
    const auto decay = decay_parameter(ws.work(), cfg.mode, boundary.kind, cfg.ladder);
    res.summary["grid_value"] = decay_json(decay);
    double lambda0 = decay.value;
    if (cfg.richardson_h && !decay.no_qsd && cfg.grid.n % 4 == 0 && cfg.grid.n / 4 >= 16) {
        std::vector<double> hs, vals;
        for (std::size_t c : {1, 2, 4}) {
            double v = decay.value;
            if (c > 1) {
                Workspace coarse(cfg, c);
                v = decay_parameter(coarse.work(), cfg.mode, boundary.kind, cfg.ladder).value;
            }
            const auto& g = *ws.grid;
            hs.push_back((g.right_end() - g.left_end()) / static_cast<double>(cfg.grid.n) * static_cast<double>(c));
            vals.push_back(v);
        }
        auto ex = richardson_three(hs, vals);
        res.summary["h_richardson"] = {{"spacings", ex.spacings},
                                       {"values", ex.values},
                                       {"order", ex.order},
                                       {"applied", ex.applied},
                                       {"value", ex.value}};
        lambda0 = ex.value;
    }
    res.summary["lambda0"] = lambda0;
    res.summary["no_qsd"] = decay.no_qsd;
    if (ws.truncated()) {
        const auto short_decay = decay_parameter(*ws.fam, cfg.mode, boundary.kind, cfg.ladder);
        res.summary["truncation"] =
            detail::delta_json("lambda0", short_decay.value, decay.value, cfg.tolerances.truncation);
    }
    out.write_json("lambda0.json", res.summary);
    return res;
}

// ---------------------------------------------------------------------------

inline constexpr double kHSlack = 1e-12;

inline json qsd_report_json(const QsdReport& rep) {
    json j{{"mode", to_string(rep.mode)},
           {"status", rep.status},
           {"has_qsd", rep.has_qsd},
           {"boundary", detail::boundary_json(rep.boundary)},
           {"decay", decay_json(rep.decay)}};
    if (rep.qsd) {
        j["qsd"] = {{"lambda", rep.qsd->lambda},
                    {"constant", rep.qsd->constant},
                    {"raw_mass", rep.qsd->raw_mass},
                    {"normalization", rep.qsd->normalization}};
    }
    if (rep.rho) {
        j["rho"] = {{"value", rep.rho->value},
                    {"finite_difference", rep.rho->fd_value},
                    {"fd_step", rep.rho->fd_eps},
                    {"simple_root", rep.rho->simple_root}};
    }
    if (rep.yaglom) {
        j["yaglom"] = {{"pi_mass", rep.yaglom->pi_mass}, {"profile_increasing", rep.yaglom->profile_increasing}};
    }
    if (rep.h_half) j["h_half_lambda0"] = *rep.h_half;
    return j;
}

inline CommandResult run_qsd(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    CommandResult res;
    const auto rep = build_qsd_report(*ws.fam, cfg.mode, ws.longer.get(), cfg.ladder);
    res.summary["command"] = "qsd";
    res.summary.update(qsd_report_json(rep));
    if (rep.has_qsd && rep.boundary.kind == BoundaryKind::NonEntrance) {
        json family = json::array();
        for (double frac : {0.2, 0.6, 1.0}) {
            const auto d = qsd_density(ws.work(), frac * rep.decay.value, cfg.mode);
            family.push_back({{"lambda", d.lambda}, {"normalization", d.normalization}, {"raw_mass", d.raw_mass}});
        }
        res.summary["family"] = family;
    }
    if (rep.h_half && !(*rep.h_half >= -kHSlack && *rep.h_half < 1.0)) {
        res.summary["invariant_failure"] = "h outside [0,1)";
        res.exit_code = kExitInvariant;
    }
    if (rep.qsd) {
        const auto& fam = ws.work();
        std::vector<std::string> header{"node", "mass", "density"};
        std::vector<std::vector<double>> cols{detail::node_column(fam.nodes()),
                                              {fam.measure().masses().begin(), fam.measure().masses().end()},
                                              rep.qsd->density};
        if (rep.yaglom) {
            header.insert(header.end(), {"survival_profile", "q_process_density"});
            cols.push_back(rep.yaglom->profile);
            cols.push_back(rep.yaglom->pi);
        }
        out.write("qsd.csv", detail::csv_table(header, cols));
    }
    out.write_json("qsd.json", res.summary);
    return res;
}

// ---------------------------------------------------------------------------

inline CommandResult run_identities(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    IdentityOptions opt;
    opt.qs = cfg.qs;
    opt.resolvent_budget = cfg.tolerances.identity_budget;
    opt.quad_precision = cfg.identities.quad_precision;
    opt.series = cfg.series;
    opt.max_power = cfg.identities.max_power;
    const auto rep = run_identity_suite(*ws.fam, opt);
    CommandResult res;
    res.summary["command"] = "identities";
    res.summary["precision"] = opt.quad_precision ? "binary128" : "double";
    json rows = json::array();
    std::ostringstream csv;
    csv << "check,detail,residual,budget,violations,pass\n";
    for (const auto& c : rep.checks) {
        rows.push_back({{"check", c.name},
                        {"detail", c.detail},
                        {"residual", c.residual},
                        {"budget", c.budget},
                        {"violations", c.violations},
                        {"pass", c.pass}});
        csv << c.name << ",\"" << c.detail << "\"," << io::format_double(c.residual) << ','
            << io::format_double(c.budget) << ',' << c.violations << ',' << (c.pass ? "true" : "false") << '\n';
    }
    res.summary["checks"] = rows;
    res.summary["pass"] = rep.pass;
    res.exit_code = rep.pass ? kExitOk : kExitInvariant;
    out.write("identities.csv", csv.str());
    out.write_json("identities.json", res.summary);
    return res;
}

// ---------------------------------------------------------------------------

namespace detail {

inline json mc_json(const McEstimate& e) {
    json j{{"estimate", e.value},
           {"std_error", e.std_error},
           {"paths", e.n_paths},
           {"dt", e.dt},
           {"bias_note", e.bias_note},
           {"flagged", e.flagged}};
    if (e.halved_dt_value) j["halved_dt_estimate"] = *e.halved_dt_value;
    return j;
}

inline json compare_json(const McEstimate& e, double prediction) {
    json j = mc_json(e);
    j["prediction"] = prediction;
    const double z = e.std_error > 0.0 ? (e.value - prediction) / e.std_error
                                       : (e.value == prediction ? 0.0 : std::numeric_limits<double>::infinity());
    j["z_score"] = z;
    j["within_3se"] = std::abs(z) <= 3.0;
    return j;
}

inline std::size_t node_for(const Grid& g, double v, const char* field) {
    try {
        return g.index_of(v);
    } catch (const OffGrid&) {
        throw ConfigError(std::string("config field '") + field + "': " + io::format_double(v) + " is not a grid node");
    }
}

}  // namespace detail

inline CommandResult run_mc(const RunConfig& cfg, OutputDir& out) {
    Workspace ws(cfg);
    const auto& g = *ws.grid;
    const auto model = build_model(cfg, ws.grid);
    const double x = cfg.mc.x.value_or(g.left_end());
    const double y = cfg.mc.y.value_or(g[g.size() / 2]);
    const double z = cfg.mc.z.value_or(g.right_end());
    const std::size_t ix = detail::node_for(g, x, "mc.x");
    const std::size_t iy = detail::node_for(g, y, "mc.y");
    const std::size_t iz = detail::node_for(g, z, "mc.z");
    if (!(ix < iy && iy < iz)) throw ConfigError("config field 'mc': need mc.x < mc.y < mc.z");

    McOptions opts;
    opts.n_paths = cfg.mc.paths;
    opts.dt = cfg.mc.dt;
    opts.seed = cfg.seed;
    opts.bridge_correction = cfg.mc.bridge_correction;
    opts.check_dt_halving = cfg.mc.check_dt_halving;

    CommandResult res;
    res.summary["command"] = "mc";
    res.summary["seed"] = cfg.seed;
    res.summary["levels"] = {{"x", x}, {"y", y}, {"z", z}};
    bool any_flag = false;

    json exits = json::array();
    for (double q : cfg.qs) {
        if (q < 0.0) {
            exits.push_back({{"q", q}, {"skipped", "negative q is not estimated by simulation"}});
            continue;
        }
        auto e = estimate_exit_laplace(model, q, x, y, z, opts);
        json j = detail::compare_json(e, exit_laplace_down(*ws.fam, q, ix, iy, iz));
        j["q"] = q;
        any_flag = any_flag || e.flagged;
        exits.push_back(std::move(j));
    }
    res.summary["exit_laplace"] = exits;

    auto mean = estimate_mean_exit_time(model, x, y, z, opts);
    res.summary["mean_exit_time"] = detail::compare_json(mean, mean_exit_time(*ws.fam, ix, iy, iz));
    any_flag = any_flag || mean.flagged;

    const auto rep = build_qsd_report(*ws.fam, cfg.mode, ws.longer.get(), cfg.ladder);
    res.summary["qsd_status"] = rep.status;
    if (rep.has_qsd) {
        const double lambda0 = rep.decay.value;
        const auto& times = cfg.mc.times;
        auto curve = estimate_survival_curve(model, y, times, opts);
        json surv = json::array();
        for (std::size_t k = 0; k < times.size(); ++k) {
            json j = detail::mc_json(curve[k]);
            j["t"] = times[k];
            surv.push_back(std::move(j));
        }
        res.summary["survival"] = surv;
        json slopes = json::array();
        for (std::size_t k = 0; k + 1 < times.size(); ++k) {
            auto s = survival_log_slope(curve[k], curve[k + 1], times[k], times[k + 1]);
            json j = detail::compare_json(s, -lambda0);
            j["t1"] = times[k];
            j["t2"] = times[k + 1];
            slopes.push_back(std::move(j));
        }
        res.summary["survival_log_slope"] = slopes;

        const auto& work = ws.work();
        if (rep.boundary.kind != BoundaryKind::NonEntrance) {
            auto eig = detail::survival_profile_raw(work, cfg.mode, lambda0);
            auto inv = estimate_invariance(model, work.grid(), eig, lambda0, y, times.front(), opts);
            json j = detail::mc_json(inv.estimate);
            j["t"] = times.front();
            j["prediction"] = inv.prediction;
            j["ratio"] = inv.ratio;
            j["ratio_se"] = inv.ratio_se;
            j["within_3se"] = std::abs(inv.ratio - 1.0) <= 3.0 * inv.ratio_se;
            res.summary["invariance"] = j;
        }

        const double lo = g.left_end(), hi = g.right_end();
        auto ref = bin_probabilities(work.measure(), rep.qsd->density, lo, hi, cfg.mc.bins);
        json law_j;
        try {
            auto law = empirical_conditional_law(model, y, times.back(), lo, hi, ref, opts);
            law_j = {{"t", law.t}, {"survivors", law.survivors}, {"paths", law.n_paths}, {"tv", law.tv}};
            std::vector<double> b_lo, b_hi, counts, emp;
            const double w = (hi - lo) / static_cast<double>(cfg.mc.bins);
            for (std::size_t b = 0; b < cfg.mc.bins; ++b) {
                b_lo.push_back(lo + w * static_cast<double>(b));
                b_hi.push_back(lo + w * static_cast<double>(b + 1));
                counts.push_back(static_cast<double>(law.counts[b]));
                emp.push_back(static_cast<double>(law.counts[b]) / static_cast<double>(law.survivors));
            }
            out.write("conditional_law.csv",
                      detail::csv_table({"bin_lo", "bin_hi", "count", "empirical", "reference"},
                                        {b_lo, b_hi, counts, emp, law.reference}));
        } catch (const SurvivorStarvation& e) {
            law_j = {{"t", times.back()}, {"error", e.what()}};
            any_flag = true;
        }
        res.summary["conditional_law"] = law_j;
    }
    res.summary["flagged"] = any_flag;
    out.write_json("mc.json", res.summary);
    return res;
}

// ---------------------------------------------------------------------------

/**
 * ℓ-limit quantities on the truncation and on its doubling. Empty for
 * finite intervals.
 */
inline json truncation_deltas(const Workspace& ws) {
    json arr = json::array();
    if (!ws.truncated()) return arr;
    const auto& cfg = ws.cfg;
    const double tol = cfg.tolerances.truncation;
    const auto& s = *ws.fam;
    const auto& l = *ws.longer;
    arr.push_back(detail::delta_json("entrance_integral", entrance_integral(s), entrance_integral(l), tol));
    const auto boundary = detail::classify(ws);
    const auto ds = decay_parameter(s, cfg.mode, boundary.kind, cfg.ladder);
    const auto dl = decay_parameter(l, cfg.mode, boundary.kind, cfg.ladder);
    arr.push_back(detail::delta_json("lambda0", ds.value, dl.value, tol));
    const std::size_t iy = s.size() / 2;
    for (double q : cfg.qs) {
        if (!(q > 0.0)) continue;
        arr.push_back(detail::delta_json("g_q(a,y) " + detail::q_label(q), g_q(s, q, 0, iy).value,
                                         g_q(l, q, 0, iy).value, tol));
    }
    if (dl.no_qsd || ds.no_qsd) return arr;
    arr.push_back(detail::delta_json("qsd_normalization", qsd_density(s, ds.value, cfg.mode).normalization,
                                     qsd_density(l, dl.value, cfg.mode).normalization, tol));
    if (boundary.kind == BoundaryKind::Entrance) {
        arr.push_back(detail::delta_json("rho", rho(s, ds.value, cfg.mode).value, rho(l, dl.value, cfg.mode).value, tol));
        arr.push_back(detail::delta_json("h_half_lambda0", h_func(s, 0.0, 0.5 * ds.value, 0),
                                         h_func(l, 0.0, 0.5 * dl.value, 0), tol));
    }
    return arr;
}

inline CommandResult run_report(const RunConfig& cfg, OutputDir& out) {
    CommandResult res;
    json manifest;
    manifest["config"] = to_json(cfg);
    json commands;
    int code = kExitOk;
    auto record = [&](const std::string& name, CommandResult r) {
        commands[name] = std::move(r.summary);
        if (r.exit_code != kExitOk && code == kExitOk) code = r.exit_code;
    };
    record("compute-w", run_compute_w(cfg, out));
    record("z", run_z(cfg, out));
    record("lambda0", run_lambda0(cfg, out));
    record("qsd", run_qsd(cfg, out));
    manifest["commands"] = commands;
    Workspace ws(cfg);
    manifest["truncation_deltas"] = truncation_deltas(ws);
    manifest["files"] = out.files();
    out.write_json("manifest.json", manifest);
    res.summary = json{{"command", "report"}, {"manifest", "manifest.json"}, {"files", manifest["files"]}};
    res.exit_code = code;
    return res;
}

}  // namespace scaleqsd
