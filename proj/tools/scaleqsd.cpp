#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scaleqsd/commands.hpp"

namespace {

using namespace scaleqsd;

struct Overrides {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::string> q;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<double> dt;
    std::optional<std::string> t;
    std::optional<std::size_t> bins;
};

std::vector<double> parse_list(const std::string& text, const char* flag) {
    std::vector<double> out;
    for (auto part : io::split_csv_line(text)) {
        while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
        while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
        try {
            out.push_back(io::parse_double(part));
        } catch (const std::exception&) {
            throw ConfigError(std::string("flag ") + flag + ": '" + std::string(part) + "' is not a number");
        }
    }
    if (out.empty()) throw ConfigError(std::string("flag ") + flag + ": empty list");
    return out;
}

RunConfig load(const Overrides& o) {
    RunConfig cfg = parse_config(o.config);
    if (o.out) cfg.output_dir = *o.out;
    if (o.q) cfg.qs = parse_list(*o.q, "--q");
    if (o.seed) cfg.seed = *o.seed;
    if (o.paths) cfg.mc.paths = *o.paths;
    if (o.dt) cfg.mc.dt = *o.dt;
    if (o.t) cfg.mc.times = parse_list(*o.t, "--t");
    if (o.bins) cfg.mc.bins = *o.bins;
    validate_config(cfg);
    return cfg;
}

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--q", o.q, "comma-separated q values");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--paths", o.paths, "Monte Carlo paths");
    sub->add_option("--dt", o.dt, "Euler step");
    sub->add_option("--t", o.t, "comma-separated times");
    sub->add_option("--bins", o.bins, "histogram bins");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scale functions, decay parameters and quasi-stationary distributions"};
    app.require_subcommand(1);
    Overrides o;
    using Runner = CommandResult (*)(const RunConfig&, OutputDir&);
    const std::vector<std::pair<std::string, Runner>> commands{
        {"compute-w", run_compute_w}, {"z", run_z},   {"lambda0", run_lambda0}, {"qsd", run_qsd},
        {"identities", run_identities}, {"mc", run_mc}, {"report", run_report},
    };
    std::vector<CLI::App*> subs;
    for (const auto& [name, fn] : commands) add_common(subs.emplace_back(app.add_subcommand(name)), o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const RunConfig cfg = load(o);
        OutputDir out(cfg.output_dir);
        for (std::size_t k = 0; k < commands.size(); ++k) {
            if (!subs[k]->parsed()) continue;
            auto res = commands[k].second(cfg, out);
            std::cout << res.summary.dump(2) << '\n';
            return res.exit_code;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InconclusiveClassification& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInconclusive;
    } catch (const InvariantFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvariant;
    } catch (const NegativeDensity& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvariant;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
