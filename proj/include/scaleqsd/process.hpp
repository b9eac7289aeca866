#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/kernel.hpp"

namespace scaleqsd {

enum class ProcessKind { Diffusion, SpectrallyPositiveLevy };

enum class BoundaryMode {
    InaccessibleUpper,         // killed at 0; the upper end is never reached
    AccessibleBoth,            // killed at 0 and at the upper end
    AccessibleKillAtZeroOnly,  // killed at 0; reflected at the upper end
};

inline const char* to_string(BoundaryMode m) {
    switch (m) {
        case BoundaryMode::InaccessibleUpper: return "inaccessible";
        case BoundaryMode::AccessibleBoth: return "accessible_both";
        case BoundaryMode::AccessibleKillAtZeroOnly: return "accessible_kill_at_zero";
    }
    return "?";
}

/**
 * Normalization of (W, m) for diffusions. Rescaling W(x,y) -> W(x,y)/φ(y)
 * together with m(du) -> φ(u) m(du) leaves every ⊗ identity, exit ratio,
 * Z^(q) and QSD unchanged.
 *
 *   Speed:           W = s(y) - s(x),         m = 2 / (σ² s') dx
 *   ScaleDerivative: W = (s(y) - s(x)) / s'(y), m = 2 / σ² dx
 *
 * ScaleDerivative keeps W bounded when s grows like exp(x⁴), where the
 * speed normalization overflows double precision.
 */
enum class DiffusionGauge { Speed, ScaleDerivative };

using Coefficient = std::function<double(double)>;

struct DiffusionSpec {
    Coefficient drift;
    Coefficient sigma;
    std::string drift_text;
    std::string sigma_text;
    DiffusionGauge gauge = DiffusionGauge::Speed;
};

// X_t = x - c t + σ B_t + compound Poisson(rate, Exp(theta)) upward jumps.
// The dual Laplace exponent is ψ(β) = σ²β²/2 + cβ - rate·β/(theta + β).
struct LevySpec {
    double drift_c = 0.0;
    double sigma = 1.0;
    double jump_rate = 0.0;
    double jump_theta = 1.0;
};

struct ProcessModel {
    ProcessKind kind = ProcessKind::SpectrallyPositiveLevy;
    std::string name;
    DiffusionSpec diffusion;
    LevySpec levy;
    GridPtr domain;
    BoundaryMode mode = BoundaryMode::InaccessibleUpper;

    double drift(double x) const {
        return kind == ProcessKind::Diffusion ? diffusion.drift(x) : -levy.drift_c;
    }
    double sigma(double x) const {
        return kind == ProcessKind::Diffusion ? diffusion.sigma(x) : levy.sigma;
    }
};

// Factories for the catalog.

inline ProcessModel levy_model(std::string name, LevySpec spec, GridPtr domain, BoundaryMode mode) {
    if (!(spec.sigma > 0.0)) {
        throw InvalidArgument("process_catalog", "Lévy catalog requires a positive Gaussian coefficient");
    }
    if (spec.jump_rate < 0.0 || (spec.jump_rate > 0.0 && !(spec.jump_theta > 0.0))) {
        throw InvalidArgument("process_catalog", "jump rate must be >= 0 and the exponential rate > 0");
    }
    ProcessModel m;
    m.kind = ProcessKind::SpectrallyPositiveLevy;
    m.name = std::move(name);
    m.levy = spec;
    m.domain = std::move(domain);
    m.mode = mode;
    return m;
}

// Brownian motion σ = 1 with drift -c, viewed as a spectrally positive
// Lévy process (Lebesgue reference measure).
inline ProcessModel brownian_levy(GridPtr domain, BoundaryMode mode, double c = 0.0) {
    return levy_model(c == 0.0 ? "brownian" : "brownian_drift", LevySpec{c, 1.0, 0.0, 1.0}, std::move(domain), mode);
}

inline ProcessModel diffusion_model(std::string name, Coefficient drift, Coefficient sigma, GridPtr domain,
                                    BoundaryMode mode, DiffusionGauge gauge = DiffusionGauge::Speed,
                                    std::string drift_text = {}, std::string sigma_text = {}) {
    ProcessModel m;
    m.kind = ProcessKind::Diffusion;
    m.name = std::move(name);
    m.diffusion = DiffusionSpec{std::move(drift), std::move(sigma), std::move(drift_text), std::move(sigma_text), gauge};
    m.domain = std::move(domain);
    m.mode = mode;
    return m;
}

// Piecewise-linear interpolation of node samples (constant beyond the ends).
inline Coefficient interpolate_samples(const GridPtr& grid, std::vector<double> samples) {
    if (samples.size() != grid->size()) {
        throw InvalidArgument("process_catalog", "coefficient sample count does not match node count");
    }
    return [grid, samples = std::move(samples)](double x) {
        const auto& g = *grid;
        if (x <= g.left_end()) return samples.front();
        if (x >= g.right_end()) return samples.back();
        std::size_t i = g.floor_index(x);
        double t = (x - g[i]) / (g[i + 1] - g[i]);
        return samples[i] + t * (samples[i + 1] - samples[i]);
    };
}

struct BaseKernelPair {
    Kernel<double> w0;
    DiscreteMeasure measure;
};

namespace detail {

// 8-point Gauss–Legendre on [-1, 1].
inline constexpr std::array<double, 8> gl_nodes = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                   -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                   0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> gl_weights = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                     0.2223810344533745, 0.1012285362903763};

template <typename F>
double gauss_legendre(F&& f, double a, double b) {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t k = 0; k < gl_nodes.size(); ++k) s += gl_weights[k] * f(mid + half * gl_nodes[k]);
    return half * s;
}

// sinh(√s x)/√s continued to s < 0 as sin(√-s x)/√-s; series near s x² = 0.
inline double sinhc(double s, double x) {
    const double z = s * x * x;
    if (std::abs(z) < 1e-6) return x * (1.0 + z / 6.0 + z * z / 120.0);
    if (s > 0.0) {
        const double r = std::sqrt(s);
        return std::sinh(r * x) / r;
    }
    const double r = std::sqrt(-s);
    return std::sin(r * x) / r;
}

// Roots of a cubic a3 β³ + a2 β² + a1 β + a0 (Durand–Kerner, then Newton).
inline std::array<std::complex<double>, 3> cubic_roots(double a3, double a2, double a1, double a0) {
    using C = std::complex<double>;
    const C b2 = a2 / a3, b1 = a1 / a3, b0 = a0 / a3;
    auto p = [&](C z) { return ((z + b2) * z + b1) * z + b0; };
    const double scale = 1.0 + std::max({std::abs(b2), std::abs(b1), std::abs(b0)});
    std::array<C, 3> z = {C(0.4, 0.9) * scale, std::pow(C(0.4, 0.9), 2) * scale, std::pow(C(0.4, 0.9), 3) * scale};
    for (int it = 0; it < 500; ++it) {
        double change = 0.0;
        for (int i = 0; i < 3; ++i) {
            C denom = 1.0;
            for (int j = 0; j < 3; ++j)
                if (j != i) denom *= (z[i] - z[j]);
            C delta = p(z[i]) / denom;
            z[i] -= delta;
            change = std::max(change, std::abs(delta));
        }
        if (change < 1e-15 * scale) break;
    }
    for (auto& r : z) {
        for (int it = 0; it < 3; ++it) {
            C d = (3.0 * r + 2.0 * b2) * r + b1;
            if (std::abs(d) == 0.0) break;
            r -= p(r) / d;
        }
        if (std::abs(r.imag()) < 1e-13 * (1.0 + std::abs(r.real()))) r = C(r.real(), 0.0);
    }
    return z;
}

}  // namespace detail

/**
 * Closed-form W̃^(q)(x) for the Lévy catalog, the inverse Laplace transform
 * of 1/(ψ(β) - q). Brownian motion with drift uses the sinh/sin form; with
 * exponential jumps the transform is split into partial fractions over the
 * roots of (ψ(β) - q)(θ + β).
 */
inline double closed_form_wq(const ProcessModel& model, double q, double x) {
    if (model.kind != ProcessKind::SpectrallyPositiveLevy) {
        throw InvalidArgument("process_catalog", "closed-form W^(q) is only available for the Lévy catalog");
    }
    if (x <= 0.0) return 0.0;
    const auto& L = model.levy;
    const double s2 = L.sigma * L.sigma;
    if (L.jump_rate == 0.0) {
        const double disc = (L.drift_c * L.drift_c + 2.0 * q * s2) / (s2 * s2);
        return (2.0 / s2) * std::exp(-L.drift_c * x / s2) * detail::sinhc(disc, x);
    }
    const double th = L.jump_theta;
    const double a3 = 0.5 * s2, a2 = L.drift_c + 0.5 * s2 * th, a1 = L.drift_c * th - q - L.jump_rate, a0 = -q * th;
    auto roots = detail::cubic_roots(a3, a2, a1, a0);
    const double scale = 1.0 + std::abs(roots[0]) + std::abs(roots[1]) + std::abs(roots[2]);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (std::abs(roots[i] - roots[j]) < 1e-7 * scale) {
                throw InvalidArgument("process_catalog", "no closed form: repeated root of ψ(β) = q");
            }
    std::complex<double> acc = 0.0;
    for (int i = 0; i < 3; ++i) {
        std::complex<double> r = roots[i];
        std::complex<double> dp = (3.0 * a3 * r + 2.0 * a2) * r + a1;
        acc += (th + r) / dp * std::exp(r * x);
    }
    return acc.real();
}

inline BaseKernelPair levy_base(const ProcessModel& model) {
    if (model.kind != ProcessKind::SpectrallyPositiveLevy) {
        throw InvalidArgument("process_catalog", "levy_base requires a Lévy model");
    }
    const auto& grid = model.domain;
    const std::size_t n = grid->size();
    Kernel<double> w(grid, "W");
    // Translation invariance: tabulate W̃ once per offset when the grid is
    // uniform, otherwise evaluate each entry.
    const double h = (*grid)[1] - (*grid)[0];
    bool uniform = true;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(((*grid)[i] - (*grid)[i - 1]) - h) > 1e-12 * (1.0 + std::abs((*grid)[i]))) uniform = false;
    std::vector<double> table;
    if (uniform) {
        table.resize(n);
        for (std::size_t t = 0; t < n; ++t) table[t] = closed_form_wq(model, 0.0, h * static_cast<double>(t));
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto row = w.row(i);
        row[0] = 0.0;
        for (std::size_t t = 1; t < row.size(); ++t) {
            row[t] = uniform ? table[t] : closed_form_wq(model, 0.0, (*grid)[i + t] - (*grid)[i]);
        }
    }
    auto m = measure_from_density_fn(grid, [](double) { return 1.0; });
    return {std::move(w), std::move(m)};
}

/**
 * Scale kernel and speed measure of dX = b dt + σ dB on the model grid.
 *
 * log s' is accumulated by Gauss–Legendre per cell; integrals of s' (or of
 * s'(u)/s'(y) in the ScaleDerivative gauge) subdivide each cell until log s'
 * changes by at most 1/2 per piece, so steep scale functions stay accurate.
 * Normalization s(x_0) = 0.
 */
inline BaseKernelPair diffusion_base(const ProcessModel& model) {
    if (model.kind != ProcessKind::Diffusion) {
        throw InvalidArgument("process_catalog", "diffusion_base requires a diffusion model");
    }
    const auto& grid = model.domain;
    const auto& g = *grid;
    const std::size_t n = g.size();
    const auto& b = model.diffusion.drift;
    const auto& sig = model.diffusion.sigma;

    for (std::size_t i = 1; i + 1 < n; ++i) {
        double s = sig(g[i]);
        if (!(std::abs(s) > 0.0) || !std::isfinite(s)) {
            throw InvalidArgument("process_catalog", "σ vanishes at interior node " + std::to_string(i));
        }
    }
    auto dlog = [&](double u) {
        double s = sig(u);
        double v = -2.0 * b(u) / (s * s);
        if (!std::isfinite(v)) throw InvalidArgument("process_catalog", "σ vanishes near x=" + io::format_double(u));
        return v;
    };

    // log s' at nodes.
    std::vector<double> S(n, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) S[k + 1] = S[k] + detail::gauss_legendre(dlog, g[k], g[k + 1]);

    // ∫_{x_k}^{x_{k+1}} exp(S(u) - ref) du with S(u) reconstructed inside the cell.
    auto cell_integral = [&](std::size_t k, double ref) {
        const double a = g[k], c = g[k + 1];
        const double dS = std::abs(S[k + 1] - S[k]);
        const double slope_a = std::abs(dlog(a)) * (c - a), slope_c = std::abs(dlog(c)) * (c - a);
        const double variation = std::max({dS, slope_a, slope_c});
        const std::size_t pieces = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(2.0 * variation)), 1, 1 << 16);
        const double w = (c - a) / static_cast<double>(pieces);
        double total = 0.0;
        double S_left = S[k];
        for (std::size_t p = 0; p < pieces; ++p) {
            const double lo = a + w * static_cast<double>(p), hi = lo + w;
            total += detail::gauss_legendre(
                [&](double u) { return std::exp(S_left + detail::gauss_legendre(dlog, lo, u) - ref); }, lo, hi);
            S_left += detail::gauss_legendre(dlog, lo, hi);
        }
        return total;
    };

    Kernel<double> w(grid, "W");
    std::vector<double> density(n);
    if (model.diffusion.gauge == DiffusionGauge::Speed) {
        std::vector<double> ds(n - 1);
        for (std::size_t k = 0; k + 1 < n; ++k) ds[k] = cell_integral(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = w.row(i);
            double acc = 0.0;
            row[0] = 0.0;
            for (std::size_t t = 1; t < row.size(); ++t) {
                acc += ds[i + t - 1];
                row[t] = acc;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = sig(g[i]);
            density[i] = (i == 0 || i + 1 == n) ? 0.0 : 2.0 / (s * s * std::exp(S[i]));
        }
    } else {
        // J_k = ∫_{x_k}^{x_{k+1}} s'(u)/s'(x_{k+1}) du; W(x_i, x_{j+1}) = W(x_i, x_j) s'(x_j)/s'(x_{j+1}) + J_j.
        std::vector<double> J(n - 1), decay(n - 1);
        for (std::size_t k = 0; k + 1 < n; ++k) {
            J[k] = cell_integral(k, S[k + 1]);
            decay[k] = std::exp(S[k] - S[k + 1]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto row = w.row(i);
            double acc = 0.0;
            row[0] = 0.0;
            for (std::size_t t = 1; t < row.size(); ++t) {
                const std::size_t j = i + t - 1;
                acc = acc * decay[j] + J[j];
                row[t] = acc;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = sig(g[i]);
            density[i] = (i == 0 || i + 1 == n) ? 0.0 : 2.0 / (s * s);
        }
    }
    if (!w.all_finite()) {
        throw InvalidArgument("process_catalog", "scale kernel overflows; use the scale-derivative gauge");
    }
    auto m = measure_from_density(grid, density);
    return {std::move(w), std::move(m)};
}

inline BaseKernelPair base_kernel(const ProcessModel& model) {
    return model.kind == ProcessKind::Diffusion ? diffusion_base(model) : levy_base(model);
}

// ---------------------------------------------------------------------------
// Path simulation

// Counter-based seeding: stream k of master seed s is independent of how
// paths are distributed over workers.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 path_stream(std::uint64_t master_seed, std::uint64_t path_index) {
    return std::mt19937_64(splitmix64(master_seed ^ splitmix64(path_index + 1)));
}

enum class ExitSide { None, Lower, Upper };

// Barriers for a single run. Lower is always absorbing; the upper end is
// absent, absorbing or reflecting.
struct Barriers {
    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    enum class Upper { None, Kill, Reflect } upper_kind = Upper::None;
    // Brownian-bridge crossing test between steps for absorbing barriers.
    bool bridge_correction = true;
};

inline Barriers model_barriers(const ProcessModel& model, bool bridge_correction = true) {
    Barriers b;
    b.lower = model.domain->left_end();
    b.bridge_correction = bridge_correction;
    switch (model.mode) {
        case BoundaryMode::InaccessibleUpper: break;
        case BoundaryMode::AccessibleBoth:
            b.upper = model.domain->right_end();
            b.upper_kind = Barriers::Upper::Kill;
            break;
        case BoundaryMode::AccessibleKillAtZeroOnly:
            b.upper = model.domain->right_end();
            b.upper_kind = Barriers::Upper::Reflect;
            break;
    }
    return b;
}

struct RunResult {
    ExitSide side = ExitSide::None;
    double time = 0.0;   // exit time, or the horizon when alive
    double value = 0.0;  // position at exit or at the horizon
};

/**
 * Euler–Maruyama stepper for the catalog. Diffusions step with the local
 * coefficients; Lévy models add a Gaussian increment, the drift and a
 * compound-Poisson sum of exponential jumps. Jumps are only upward, so the
 * lower barrier is crossed by the continuous part alone; the bridge test
 * uses the pre-jump endpoint.
 */
class PathSimulator {
public:
    PathSimulator(const ProcessModel& model, Barriers barriers) : model_(model), barriers_(barriers) {}

    template <typename Rng, typename Observer>
    RunResult run(double x0, double dt, double horizon, Rng& rng, Observer&& observe) const {
        if (!(dt > 0.0)) throw InvalidArgument("process_catalog", "time step must be positive");
        RunResult r;
        if (x0 <= barriers_.lower) {
            r.side = ExitSide::Lower;
            r.time = 0.0;
            r.value = x0;
            return r;
        }
        if (barriers_.upper_kind == Barriers::Upper::Kill && x0 >= barriers_.upper) {
            r.side = ExitSide::Upper;
            r.value = x0;
            return r;
        }
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        double x = x0, t = 0.0;
        observe(t, x);
        const bool levy = model_.kind == ProcessKind::SpectrallyPositiveLevy;
        const double lam = levy ? model_.levy.jump_rate : 0.0;
        std::exponential_distribution<double> jump_size(levy && lam > 0.0 ? model_.levy.jump_theta : 1.0);
        while (t < horizon - 1e-12 * horizon) {
            const double h = std::min(dt, horizon - t);
            const double sd = levy ? model_.levy.sigma : model_.diffusion.sigma(x);
            const double mu = levy ? -model_.levy.drift_c : model_.diffusion.drift(x);
            double cont = x + mu * h + sd * std::sqrt(h) * normal(rng);
            double jumps = 0.0;
            if (lam > 0.0) {
                std::poisson_distribution<int> count(lam * h);
                int k = count(rng);
                for (int j = 0; j < k; ++j) jumps += jump_size(rng);
            }
            t += h;
            if (cont <= barriers_.lower || crossed(x, cont, barriers_.lower, sd, h, unif, rng)) {
                r.side = ExitSide::Lower;
                r.time = t;
                r.value = std::min(cont, barriers_.lower);
                return r;
            }
            double next = cont + jumps;
            if (barriers_.upper_kind == Barriers::Upper::Kill) {
                if (next >= barriers_.upper ||
                    (jumps == 0.0 && crossed(barriers_.upper - x, barriers_.upper - next, 0.0, sd, h, unif, rng))) {
                    r.side = ExitSide::Upper;
                    r.time = t;
                    r.value = std::max(next, barriers_.upper);
                    return r;
                }
            } else if (barriers_.upper_kind == Barriers::Upper::Reflect) {
                if (next > barriers_.upper) next = 2.0 * barriers_.upper - next;
                if (next <= barriers_.lower) {
                    r.side = ExitSide::Lower;
                    r.time = t;
                    r.value = barriers_.lower;
                    return r;
                }
            }
            x = next;
            observe(t, x);
        }
        r.side = ExitSide::None;
        r.time = horizon;
        r.value = x;
        return r;
    }

    template <typename Rng>
    RunResult run(double x0, double dt, double horizon, Rng& rng) const {
        return run(x0, dt, horizon, rng, [](double, double) {});
    }

private:
    // Probability that a Brownian bridge from a to b (both above `level`)
    // over time h with volatility sd dips below `level`; the uniform is only
    // drawn when that probability exceeds e^-40.
    template <typename Rng>
    bool crossed(double a, double b, double level, double sd, double h, std::uniform_real_distribution<double>& unif,
                 Rng& rng) const {
        if (!barriers_.bridge_correction) return false;
        const double da = a - level, db = b - level;
        if (da <= 0.0 || db <= 0.0) return false;
        const double expo = 2.0 * da * db / (sd * sd * h);
        if (expo > 40.0) return false;
        return unif(rng) < std::exp(-expo);
    }

    const ProcessModel& model_;
    Barriers barriers_;
};

struct PathRecord {
    std::vector<double> times;
    std::vector<double> values;
    ExitSide exit = ExitSide::None;
    double exit_time = 0.0;
};

// Full trajectory killed (or reflected) according to the model's boundary mode.
template <typename Rng>
PathRecord simulate_path(const ProcessModel& model, double x0, double dt, double horizon, Rng& rng,
                         bool bridge_correction = true) {
    if (!(dt > 0.0)) throw InvalidArgument("process_catalog", "time step must be positive");
    if (horizon < 0.0) throw InvalidArgument("process_catalog", "horizon must be non-negative");
    const auto& g = *model.domain;
    const bool bounded_above = model.mode != BoundaryMode::InaccessibleUpper;
    if (x0 < g.left_end() || (bounded_above && x0 > g.right_end()) || !std::isfinite(x0)) {
        throw InvalidArgument("process_catalog", "starting point outside the state interval");
    }
    PathRecord rec;
    PathSimulator sim(model, model_barriers(model, bridge_correction));
    auto res = sim.run(x0, dt, horizon, rng, [&](double t, double x) {
        rec.times.push_back(t);
        rec.values.push_back(x);
    });
    if (rec.times.empty()) {
        rec.times.push_back(0.0);
        rec.values.push_back(x0);
    }
    rec.exit = res.side;
    rec.exit_time = res.time;
    if (res.side != ExitSide::None && res.time > 0.0) {
        rec.times.push_back(res.time);
        rec.values.push_back(res.value);
    }
    return rec;
}

}  // namespace scaleqsd
