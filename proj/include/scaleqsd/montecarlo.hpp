#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/parallel.hpp"
#include "scaleqsd/process.hpp"

namespace scaleqsd {

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;  // sample std / sqrt(n_paths)
    std::size_t n_paths = 0;
    double dt = 0.0;
    std::string bias_note;
    bool flagged = false;
    std::optional<double> halved_dt_value;
};

struct McOptions {
    std::size_t n_paths = 100000;
    double dt = 1e-4;
    std::uint64_t seed = 20240501;
    bool bridge_correction = true;
    // Paths still inside the interval at this time count as not exited.
    double max_time = 1e4;
    bool check_dt_halving = false;
};

inline void validate(const McOptions& o) {
    if (o.n_paths < 2) throw InvalidArgument("montecarlo", "need at least 2 paths");
    if (!(o.dt > 0.0) || !std::isfinite(o.dt)) throw InvalidArgument("montecarlo", "time step must be positive");
    if (!(o.max_time > 0.0)) throw InvalidArgument("montecarlo", "max_time must be positive");
}

namespace detail {

inline constexpr std::size_t kChunk = 1024;

template <std::size_t K>
struct Moments {
    std::array<double, K> sum{};
    std::array<double, K> sum_sq{};
};

/**
 * Runs `path(index, rng, out)` for every path and returns per-output sums.
 * Paths are grouped into fixed chunks reduced in index order, so results do
 * not depend on the worker count.
 */
template <std::size_t K, typename PathFn>
Moments<K> run_paths(std::size_t n_paths, std::uint64_t seed, PathFn&& path) {
    const std::size_t chunks = (n_paths + kChunk - 1) / kChunk;
    std::vector<Moments<K>> partial(chunks);
    parallel_for(0, chunks, [&](std::size_t c) {
        auto& acc = partial[c];
        const std::size_t end = std::min(n_paths, (c + 1) * kChunk);
        std::array<double, K> out{};
        for (std::size_t p = c * kChunk; p < end; ++p) {
            auto rng = path_stream(seed, p);
            out.fill(0.0);
            path(p, rng, out);
            for (std::size_t k = 0; k < K; ++k) {
                acc.sum[k] += out[k];
                acc.sum_sq[k] += out[k] * out[k];
            }
        }
    });
    Moments<K> total;
    for (const auto& m : partial)
        for (std::size_t k = 0; k < K; ++k) {
            total.sum[k] += m.sum[k];
            total.sum_sq[k] += m.sum_sq[k];
        }
    return total;
}

inline McEstimate finish(double sum, double sum_sq, const McOptions& o, std::string note) {
    const double n = static_cast<double>(o.n_paths);
    McEstimate e;
    e.value = sum / n;
    const double var = std::max(0.0, (sum_sq - n * e.value * e.value) / (n - 1.0));
    e.std_error = std::sqrt(var / n);
    e.n_paths = o.n_paths;
    e.dt = o.dt;
    e.bias_note = std::move(note);
    return e;
}

inline std::string step_note(const McOptions& o) {
    return std::string("Euler step dt=") + io::format_double(o.dt) +
           (o.bridge_correction ? ", Brownian-bridge crossing test" : ", discrete crossing test");
}

template <typename Estimator>
McEstimate with_dt_check(const McOptions& o, Estimator&& est) {
    auto e = est(o);
    if (o.check_dt_halving) {
        McOptions half = o;
        half.dt = 0.5 * o.dt;
        half.check_dt_halving = false;
        auto h = est(half);
        e.halved_dt_value = h.value;
        const double se = std::sqrt(e.std_error * e.std_error + h.std_error * h.std_error);
        if (std::abs(h.value - e.value) > 2.0 * se) {
            e.flagged = true;
            e.bias_note += "; halving dt moved the estimate by more than 2 SE (dt too coarse)";
        }
    }
    return e;
}

inline Barriers interval_barriers(double x, double z, bool bridge) {
    Barriers b;
    b.lower = x;
    b.upper = z;
    b.upper_kind = Barriers::Upper::Kill;
    b.bridge_correction = bridge;
    return b;
}

}  // namespace detail

// E_y[e^{-q τ_x^-}; τ_x^- < τ_z^+] by simulation.
inline McEstimate estimate_exit_laplace(const ProcessModel& model, double q, double x, double y, double z,
                                        const McOptions& opts) {
    validate(opts);
    if (!(x < y && y < z)) throw InvalidArgument("montecarlo", "exit estimate requires x < y < z");
    if (q < 0.0) throw InvalidArgument("montecarlo", "negative q is not estimated by simulation");
    return detail::with_dt_check(opts, [&](const McOptions& o) {
        PathSimulator sim(model, detail::interval_barriers(x, z, o.bridge_correction));
        auto m = detail::run_paths<1>(o.n_paths, o.seed, [&](std::size_t, auto& rng, auto& out) {
            auto r = sim.run(y, o.dt, o.max_time, rng);
            if (r.side == ExitSide::Lower) out[0] = std::exp(-q * r.time);
        });
        return detail::finish(m.sum[0], m.sum_sq[0], o, detail::step_note(o));
    });
}

// E_y[τ_x^- ∧ τ_z^+].
inline McEstimate estimate_mean_exit_time(const ProcessModel& model, double x, double y, double z,
                                          const McOptions& opts) {
    validate(opts);
    if (!(x < y && y < z)) throw InvalidArgument("montecarlo", "exit estimate requires x < y < z");
    return detail::with_dt_check(opts, [&](const McOptions& o) {
        PathSimulator sim(model, detail::interval_barriers(x, z, o.bridge_correction));
        auto m = detail::run_paths<1>(o.n_paths, o.seed, [&](std::size_t, auto& rng, auto& out) {
            out[0] = sim.run(y, o.dt, o.max_time, rng).time;
        });
        return detail::finish(m.sum[0], m.sum_sq[0], o, detail::step_note(o));
    });
}

/**
 * P_x[τ > t_k] for each requested time, all from the same paths (killing
 * as configured by the model's boundary mode).
 */
inline std::vector<McEstimate> estimate_survival_curve(const ProcessModel& model, double x,
                                                       const std::vector<double>& times, const McOptions& opts) {
    validate(opts);
    if (times.empty()) return {};
    double horizon = 0.0;
    for (double t : times) {
        if (t < 0.0) throw InvalidArgument("montecarlo", "survival time must be non-negative");
        horizon = std::max(horizon, t);
    }
    PathSimulator sim(model, model_barriers(model, opts.bridge_correction));
    std::vector<double> alive(times.size(), 0.0);
    constexpr std::size_t kMax = 16;
    if (times.size() > kMax) throw InvalidArgument("montecarlo", "at most 16 survival times per run");
    auto m = detail::run_paths<kMax>(opts.n_paths, opts.seed, [&](std::size_t, auto& rng, auto& out) {
        auto r = sim.run(x, opts.dt, horizon, rng);
        for (std::size_t k = 0; k < times.size(); ++k) {
            const bool survived = r.side == ExitSide::None || r.time > times[k];
            out[k] = survived && !(x <= model.domain->left_end()) ? 1.0 : 0.0;
        }
    });
    std::vector<McEstimate> out;
    for (std::size_t k = 0; k < times.size(); ++k) {
        auto e = detail::finish(m.sum[k], m.sum_sq[k], opts, detail::step_note(opts));
        if (times[k] == 0.0 && x > model.domain->left_end()) {
            e.value = 1.0;
            e.std_error = 0.0;
        }
        if (e.value == 0.0) {
            e.flagged = true;
            e.bias_note += "; all paths killed, standard error degenerate";
        }
        out.push_back(e);
    }
    return out;
}

inline McEstimate estimate_survival(const ProcessModel& model, double x, double t, const McOptions& opts) {
    return estimate_survival_curve(model, x, {t}, opts).front();
}

/**
 * log-slope (log S(t2) - log S(t1)) / (t2 - t1) of a survival curve
 * measured on the same paths. The ratio S(t2)/S(t1) is a binomial
 * proportion among the paths alive at t1, which gives the standard error.
 */
inline McEstimate survival_log_slope(const McEstimate& s1, const McEstimate& s2, double t1, double t2) {
    if (!(t2 > t1)) throw InvalidArgument("montecarlo", "slope needs t2 > t1");
    McEstimate e;
    e.n_paths = s1.n_paths;
    e.dt = s1.dt;
    e.bias_note = s1.bias_note;
    if (!(s1.value > 0.0) || !(s2.value > 0.0)) {
        e.flagged = true;
        e.bias_note += "; no survivors";
        return e;
    }
    const double n1 = s1.value * static_cast<double>(s1.n_paths);
    const double p = s2.value / s1.value;
    e.value = std::log(p) / (t2 - t1);
    e.std_error = std::sqrt((1.0 - p) / (n1 * p)) / (t2 - t1);
    return e;
}

struct ConditionalLaw {
    double t = 0.0;
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;      // survivors per bin
    std::vector<double> reference;        // reference bin probabilities
    std::size_t survivors = 0;
    std::size_t n_paths = 0;
    double tv = 0.0;                      // ½ Σ |p̂_b - p_b|
};

inline constexpr std::size_t kMinSurvivors = 1000;

/**
 * Histogram of X_t among survivors and its binned total-variation distance
 * to a reference law given as bin probabilities on [lo, hi].
 */
inline ConditionalLaw empirical_conditional_law(const ProcessModel& model, double x, double t, double lo, double hi,
                                                const std::vector<double>& reference, const McOptions& opts,
                                                std::size_t min_survivors = kMinSurvivors) {
    validate(opts);
    if (t < 0.0) throw InvalidArgument("montecarlo", "time must be non-negative");
    if (!(hi > lo) || reference.empty()) throw InvalidArgument("montecarlo", "need a bin range and reference bins");
    const std::size_t bins = reference.size();
    PathSimulator sim(model, model_barriers(model, opts.bridge_correction));
    const std::size_t chunks = (opts.n_paths + detail::kChunk - 1) / detail::kChunk;
    std::vector<std::vector<std::size_t>> partial(chunks, std::vector<std::size_t>(bins + 1, 0));
    parallel_for(0, chunks, [&](std::size_t c) {
        auto& h = partial[c];
        const std::size_t end = std::min(opts.n_paths, (c + 1) * detail::kChunk);
        for (std::size_t p = c * detail::kChunk; p < end; ++p) {
            auto rng = path_stream(opts.seed, p);
            auto r = sim.run(x, opts.dt, t, rng);
            if (r.side != ExitSide::None) continue;
            double u = (r.value - lo) / (hi - lo) * static_cast<double>(bins);
            std::size_t b = u <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(u));
            ++h[b];
            ++h[bins];
        }
    });
    ConditionalLaw law;
    law.t = t;
    law.lo = lo;
    law.hi = hi;
    law.counts.assign(bins, 0);
    law.n_paths = opts.n_paths;
    for (const auto& h : partial) {
        for (std::size_t b = 0; b < bins; ++b) law.counts[b] += h[b];
        law.survivors += h[bins];
    }
    double ref_total = 0.0;
    for (double r : reference) ref_total += r;
    law.reference.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) law.reference[b] = reference[b] / ref_total;
    if (law.survivors < min_survivors) {
        throw SurvivorStarvation("montecarlo", std::to_string(law.survivors) + " survivors at t=" +
                                                   io::format_double(t) + ", need " + std::to_string(min_survivors));
    }
    for (std::size_t b = 0; b < bins; ++b) {
        const double p = static_cast<double>(law.counts[b]) / static_cast<double>(law.survivors);
        law.tv += 0.5 * std::abs(p - law.reference[b]);
    }
    return law;
}

// Bin probabilities of a density against the discrete measure (node masses
// on bin edges are split evenly).
inline std::vector<double> bin_probabilities(const DiscreteMeasure& m, std::span<const double> density, double lo,
                                             double hi, std::size_t bins) {
    std::vector<double> out(bins, 0.0);
    const auto& g = *m.grid();
    const double w = (hi - lo) / static_cast<double>(bins);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double mass = density[i] * m[i];
        if (mass == 0.0 || g[i] < lo || g[i] > hi) continue;
        const double u = (g[i] - lo) / w;
        const double k = std::round(u);
        if (std::abs(u - k) < 1e-9 && k > 0.0 && k < static_cast<double>(bins)) {
            out[static_cast<std::size_t>(k) - 1] += 0.5 * mass;
            out[static_cast<std::size_t>(k)] += 0.5 * mass;
        } else {
            out[std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(u))))] += mass;
        }
    }
    return out;
}

// Bin probabilities of a Lebesgue density by 8-point Gauss–Legendre per bin.
inline std::vector<double> bin_probabilities(const std::function<double(double)>& density, double lo, double hi,
                                             std::size_t bins) {
    std::vector<double> out(bins);
    const double w = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        const double a = lo + w * static_cast<double>(b);
        out[b] = detail::gauss_legendre(density, a, a + w);
    }
    return out;
}

struct InvarianceEstimate {
    McEstimate estimate;   // E_x[F(X_t); τ > t]
    double prediction = 0.0;  // e^{-λ0 t} F(x)
    double ratio = 0.0;
    double ratio_se = 0.0;
};

/**
 * Checks E_x[F(X_t); τ > t] = e^{-λ0 t} F(x) for the decay eigenfunction F
 * (Z^(-λ0) with one killing end, W^(-κ0)(·,ℓ) with two), given as samples
 * on the grid and interpolated linearly between nodes.
 */
inline InvarianceEstimate estimate_invariance(const ProcessModel& model, const GridPtr& grid,
                                              std::vector<double> eigenfunction, double lambda0, double x, double t,
                                              const McOptions& opts) {
    validate(opts);
    if (t < 0.0) throw InvalidArgument("montecarlo", "time must be non-negative");
    auto f = interpolate_samples(grid, std::move(eigenfunction));
    PathSimulator sim(model, model_barriers(model, opts.bridge_correction));
    auto m = detail::run_paths<1>(opts.n_paths, opts.seed, [&](std::size_t, auto& rng, auto& out) {
        auto r = sim.run(x, opts.dt, t, rng);
        if (r.side == ExitSide::None) out[0] = f(r.value);
    });
    InvarianceEstimate inv;
    inv.estimate = detail::finish(m.sum[0], m.sum_sq[0], opts, detail::step_note(opts));
    inv.prediction = std::exp(-lambda0 * t) * f(x);
    if (t == 0.0) {
        inv.estimate.value = f(x);
        inv.estimate.std_error = 0.0;
    }
    inv.ratio = inv.estimate.value / inv.prediction;
    inv.ratio_se = inv.estimate.std_error / std::abs(inv.prediction);
    return inv;
}

}  // namespace scaleqsd
