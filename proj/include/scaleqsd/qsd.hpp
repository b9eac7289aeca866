#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/parallel.hpp"
#include "scaleqsd/process.hpp"
#include "scaleqsd/scale.hpp"

namespace scaleqsd {

enum class BoundaryKind { Entrance, NonEntrance, AccessibleUpper };

inline const char* to_string(BoundaryKind k) {
    switch (k) {
        case BoundaryKind::Entrance: return "entrance";
        case BoundaryKind::NonEntrance: return "non_entrance";
        case BoundaryKind::AccessibleUpper: return "accessible";
    }
    return "?";
}

struct BoundaryClass {
    BoundaryKind kind = BoundaryKind::Entrance;
    double integral_value = 0.0;  // ∫_(0,ℓ) W(0,u) m(du) on the longer truncation
    double integral_short = 0.0;  // same on the shorter truncation
    double growth = 1.0;          // ratio of the two
    double sensitivity = 0.0;     // |growth - 1|
    // sup_x E_x[τ_0] equals the integral; kept separately for the MC cross-check.
    double sup_mean_exit_time = 0.0;
};

inline constexpr double kEntranceSensitivity = 0.05;
inline constexpr double kNonEntranceGrowth = 1.5;

inline double entrance_integral(const ScaleFamily& fam) { return fam.wbar_kernel()(0, fam.size() - 1); }

// Boundary class on a finite interval where ℓ belongs to the state space.
inline BoundaryClass classify_boundary(const ScaleFamily& fam, BoundaryMode mode) {
    if (fam.nodes().truncated() && mode == BoundaryMode::InaccessibleUpper) {
        throw InvalidArgument("qsd_solver", "truncated grid needs a doubled truncation to classify");
    }
    const double v = entrance_integral(fam);
    BoundaryClass c;
    c.kind = mode == BoundaryMode::InaccessibleUpper ? BoundaryKind::Entrance : BoundaryKind::AccessibleUpper;
    c.integral_value = c.integral_short = c.sup_mean_exit_time = v;
    return c;
}

/**
 * Entrance when the integral changes by less than 5% from truncation L to
 * 2L; non-entrance when it grows by a factor of at least 1.5. In between
 * the classification is refused.
 */
inline BoundaryClass classify_boundary(const ScaleFamily& fam_short, const ScaleFamily& fam_long) {
    if (!(fam_long.nodes().right_end() > fam_short.nodes().right_end())) {
        throw InvalidArgument("qsd_solver", "second truncation must extend the first");
    }
    BoundaryClass c;
    c.integral_short = entrance_integral(fam_short);
    c.integral_value = entrance_integral(fam_long);
    c.sup_mean_exit_time = c.integral_value;
    c.growth = c.integral_value / c.integral_short;
    c.sensitivity = std::abs(c.growth - 1.0);
    if (c.sensitivity < kEntranceSensitivity) {
        c.kind = BoundaryKind::Entrance;
    } else if (c.growth >= kNonEntranceGrowth) {
        c.kind = BoundaryKind::NonEntrance;
    } else {
        throw InconclusiveClassification("qsd_solver", "integral grows by factor " + io::format_double(c.growth) +
                                                           " under doubled truncation");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Root bracketing

struct LadderOptions {
    double start = 1e-4;
    double ratio = 1.25;
    double max = 1e3;
    double rel_tol = 1e-8;
};

/**
 * Smallest λ > 0 where target(λ) <= 0, given target(0) > 0. λ runs up a
 * geometric ladder until the sign changes, then the bracket is bisected.
 * Ladder points are evaluated in parallel batches.
 */
inline double first_root(const std::function<double(double)>& target, const LadderOptions& opt) {
    if (!(opt.start > 0.0) || !(opt.ratio > 1.0) || !(opt.max > opt.start) || !(opt.rel_tol > 0.0)) {
        throw InvalidArgument("qsd_solver", "invalid λ ladder");
    }
    if (!(target(0.0) > 0.0)) throw InvariantFailure("qsd_solver", "target is not positive at λ = 0");
    std::vector<double> ladder;
    for (double l = opt.start; l < opt.max; l *= opt.ratio) ladder.push_back(l);
    ladder.push_back(opt.max);

    const std::size_t batch = std::max<std::size_t>(1, worker_count());
    double lo = 0.0, hi = -1.0;
    for (std::size_t b = 0; b < ladder.size() && hi < 0.0; b += batch) {
        const std::size_t e = std::min(ladder.size(), b + batch);
        std::vector<double> vals(e - b);
        parallel_for(b, e, [&](std::size_t k) { vals[k - b] = target(ladder[k]); });
        for (std::size_t k = b; k < e; ++k) {
            if (!(vals[k - b] > 0.0)) {
                hi = ladder[k];
                break;
            }
            lo = ladder[k];
        }
    }
    if (hi < 0.0) {
        throw NoRootInRange("qsd_solver", "no sign change for λ in (0, " + io::format_double(opt.max) + "]");
    }
    while (hi - lo > opt.rel_tol * hi) {
        const double mid = 0.5 * (lo + hi);
        (target(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Z^(-λ)(0, x_last) through the forward row at 0.
inline double z_at_origin(const ScaleFamily& fam, double lambda, std::size_t last) {
    const auto mass = fam.measure().masses();
    auto row = volterra_row<double>(fam.w0(), mass, -lambda, 0, last);
    double acc = 0.0;
    for (std::size_t u = 1; u < last; ++u) acc += row[u] * mass[u];
    return 1.0 - lambda * acc;
}

inline double w_at_end(const ScaleFamily& fam, double lambda, std::size_t first, std::size_t last) {
    return volterra_row<double>(fam.w0(), fam.measure().masses(), -lambda, first, last)[last];
}

inline double min_on_row(const ScaleFamily& fam, double lambda, std::size_t first, std::size_t last) {
    auto row = volterra_row<double>(fam.w0(), fam.measure().masses(), -lambda, first, last);
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = first + 1; j <= last; ++j) lo = std::min(lo, row[j]);
    return lo;
}

// First positivity failure of W^(-λ)(x,·) on (x, z]: the localized decay parameter of [x, z].
inline double localized_decay(const ScaleFamily& fam, std::size_t x, std::size_t z, const LadderOptions& opt = {}) {
    if (!(x < z) || z >= fam.size()) throw InvalidArgument("qsd_solver", "localized decay requires x < z on the grid");
    return first_root([&](double l) { return min_on_row(fam, l, x, z); }, opt);
}

struct PrefixThreshold {
    std::size_t last = 0;       // node index of the cutoff
    double length = 0.0;        // x_last - x_0
    double lambda = 0.0;        // positivity threshold on (0, x_last]
    double uncertainty = 0.0;   // rounding-induced uncertainty of lambda
    bool resolved = false;
};

inline constexpr double kRoundingSafety = 100.0;
inline constexpr double kResolvedRelative = 1e-6;

/**
 * Positivity threshold of W^(-λ)(0,·) on (0, x_last] with an estimate of
 * how far rounding in W can move it. Near the threshold the row decays
 * relative to W and its sign at the failing node is set by quantities of
 * size eps·A_j, so the uncertainty is that noise over |∂f_j/∂λ|.
 */
inline PrefixThreshold prefix_threshold(const ScaleFamily& fam, std::size_t last, const LadderOptions& opt) {
    PrefixThreshold p;
    p.last = last;
    p.length = fam.nodes()[last] - fam.nodes()[0];
    p.lambda = first_root([&](double l) { return min_on_row(fam, l, 0, last); }, opt);
    const auto mass = fam.measure().masses();
    const double d = 1e-3 * p.lambda;
    auto above = volterra_row_scaled(fam.w0(), mass, -(p.lambda + d), 0, last);
    std::size_t j_fail = last;
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j <= last; ++j) {
        if (above.values[j] < lo) {
            lo = above.values[j];
            j_fail = j;
        }
    }
    auto below = volterra_row<double>(fam.w0(), mass, -(p.lambda - d), 0, last);
    const double slope = std::abs(below[j_fail] - above.values[j_fail]) / (2.0 * d);
    const double noise = kRoundingSafety * std::numeric_limits<double>::epsilon() * above.scale[j_fail];
    p.uncertainty = slope > 0.0 ? noise / slope : std::numeric_limits<double>::infinity();
    p.resolved = p.uncertainty <= kResolvedRelative * p.lambda;
    return p;
}

struct DecayResult {
    double value = 0.0;
    std::string method;
    // True when the value is an estimate from truncated positivity scans
    // (non-entrance case) rather than a root of an exact target.
    bool caveat = false;
    bool no_qsd = false;
    // Positivity-scan cross-check: an upper bound for the decay parameter
    // in entrance and accessible modes.
    double scan_value = 0.0;
    bool scan_consistent = true;
    std::vector<PrefixThreshold> prefixes;
};

namespace detail {

inline std::vector<PrefixThreshold> nested_prefixes(const ScaleFamily& fam, const LadderOptions& opt,
                                                    std::size_t levels = 5) {
    std::vector<PrefixThreshold> out;
    std::size_t last = fam.size() - 1;
    for (std::size_t k = 0; k < levels && last >= 8; ++k, last /= 2) out.push_back(prefix_threshold(fam, last, opt));
    return out;
}

inline const PrefixThreshold* largest_resolved(const std::vector<PrefixThreshold>& ps) {
    for (const auto& p : ps)
        if (p.resolved) return &p;
    return nullptr;
}

}  // namespace detail

/**
 * Non-entrance decay parameter from positivity thresholds on nested
 * prefixes (0, L_k], L_{k+1} = L_k / 2. The largest pair whose thresholds
 * are resolved is extrapolated in L with λ(L) = λ0 + C/L².
 */
inline DecayResult nonentrance_decay(const ScaleFamily& fam, const LadderOptions& opt = {}) {
    DecayResult r;
    r.caveat = true;
    r.prefixes = detail::nested_prefixes(fam, opt);
    for (std::size_t k = 0; k + 1 < r.prefixes.size(); ++k) {
        const auto& a = r.prefixes[k];
        const auto& b = r.prefixes[k + 1];
        if (!a.resolved || !b.resolved) continue;
        const double la2 = a.length * a.length, lb2 = b.length * b.length;
        r.value = (la2 * a.lambda - lb2 * b.lambda) / (la2 - lb2);
        r.method = "positivity scan, extrapolated from L=" + io::format_double(b.length) + " and L=" +
                   io::format_double(a.length);
        r.scan_value = a.lambda;
        r.no_qsd = r.value < 0.05 * (b.lambda - a.lambda);
        if (r.no_qsd) r.value = 0.0;
        return r;
    }
    const auto* best = detail::largest_resolved(r.prefixes);
    if (!best) best = &r.prefixes.front();
    r.value = best->lambda;
    r.scan_value = best->lambda;
    r.method = "positivity scan on L=" + io::format_double(best->length) + " (upper bound, not extrapolated)";
    return r;
}

inline DecayResult decay_parameter(const ScaleFamily& fam, BoundaryMode mode, BoundaryKind kind,
                                   const LadderOptions& opt = {}) {
    const std::size_t last = fam.size() - 1;
    if (mode == BoundaryMode::InaccessibleUpper && kind == BoundaryKind::NonEntrance) {
        return nonentrance_decay(fam, opt);
    }
    DecayResult r;
    switch (mode) {
        case BoundaryMode::AccessibleBoth:
            r.value = first_root([&](double l) { return w_at_end(fam, l, 0, last); }, opt);
            r.method = "first zero of W^(-λ)(0,ℓ)";
            break;
        case BoundaryMode::AccessibleKillAtZeroOnly:
            r.value = first_root([&](double l) { return z_at_origin(fam, l, last); }, opt);
            r.method = "first zero of Z^(-λ)(0,ℓ)";
            break;
        case BoundaryMode::InaccessibleUpper:
            r.value = first_root([&](double l) { return z_at_origin(fam, l, last); }, opt);
            r.method = "first zero of Z^(-λ)(0)";
            break;
    }
    if (fam.nodes().truncated()) {
        r.prefixes = detail::nested_prefixes(fam, opt);
        const auto* best = detail::largest_resolved(r.prefixes);
        r.scan_value = best ? best->lambda : r.prefixes.front().lambda;
    } else {
        r.scan_value = prefix_threshold(fam, last, opt).lambda;
    }
    r.scan_consistent = r.scan_value >= r.value * (1.0 - 1e-6);
    return r;
}

// ---------------------------------------------------------------------------
// QSD and constants

struct QsdDensity {
    double lambda = 0.0;
    std::vector<double> density;  // against m
    double raw_mass = 0.0;        // Σ density·m on the grid
    double normalization = 0.0;   // raw_mass, tail-extrapolated on truncated grids
    double constant = 0.0;        // C multiplying W^(-λ)(0,·)
};

/**
 * Limit of partial sums S(c1), S(c2), S(c3) at equally spaced cutoffs by
 * Aitken's Δ², for geometrically converging tails. Falls back to S(c3)
 * when the differences do not contract.
 */
inline double aitken_limit(double s1, double s2, double s3) {
    const double d1 = s2 - s1, d2 = s3 - s2;
    if (std::abs(d2) <= 1e-15 * std::abs(s3) || d1 == 0.0) return s3;
    const double ratio = d2 / d1;
    if (!(ratio > 0.0 && ratio < 1.0)) return s3;
    return s3 + d2 * ratio / (1.0 - ratio);
}

inline QsdDensity qsd_density(const ScaleFamily& fam, double lambda, BoundaryMode mode) {
    if (!(lambda > 0.0)) throw InvalidArgument("qsd_solver", "QSD requires λ > 0");
    const auto& m = fam.measure();
    const std::size_t n = fam.size();
    auto row = scale_q_volterra(fam, -lambda, 0);
    QsdDensity q;
    q.lambda = lambda;
    if (mode == BoundaryMode::AccessibleBoth) {
        double mass = 0.0;
        for (std::size_t u = 1; u + 1 < n; ++u) mass += row[u] * m[u];
        if (!(mass > 0.0)) throw NegativeDensity("qsd_solver", "W^(-κ)(0,·) has non-positive mass");
        q.constant = 1.0 / mass;
    } else {
        q.constant = lambda;
    }
    q.density.resize(n);
    double top = 0.0, bottom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        q.density[i] = q.constant * row[i];
        top = std::max(top, q.density[i]);
        if (i > 0 && i + 1 < n) bottom = std::min(bottom, q.density[i]);
    }
    if (bottom < -1e-8 * top) {
        throw NegativeDensity("qsd_solver", "density negative (" + io::format_double(bottom) +
                                                ") at λ = " + io::format_double(lambda) + ": beyond the positivity threshold");
    }
    auto partial = [&](std::size_t last) {
        double acc = 0.0;
        for (std::size_t u = 1; u < last; ++u) acc += q.density[u] * m[u];
        return acc;
    };
    q.raw_mass = partial(n - 1);
    q.normalization = q.raw_mass;
    if (fam.nodes().truncated()) {
        const std::size_t last = n - 1;
        q.normalization = aitken_limit(partial(last / 2), partial((3 * last) / 4), q.raw_mass);
    }
    return q;
}

/**
 * h^(q)(λ;x) = 1 - (λ+q) Σ_{x<u<ℓ} W^(-λ)(x,u) g^(q)(x,u) m_u with
 * g^(q)(x,u) = Z^(q)(u)/Z^(q)(x). On truncated grids the integral is
 * tail-extrapolated like the QSD normalization.
 */
inline double h_func(const ScaleFamily& fam, double q, double lambda, std::size_t x) {
    if (!(q > -lambda)) throw InvalidArgument("qsd_solver", "h requires q > -λ");
    const std::size_t last = fam.size() - 1;
    if (x >= last) throw InvalidArgument("qsd_solver", "h requires an interior node");
    const auto mass = fam.measure().masses();
    auto row = volterra_row<double>(fam.w0(), mass, -lambda, x, last);
    auto z = z_backward<double>(fam.w0(), mass, q, last);
    if (!(z[x] > kPoleThreshold)) throw PoleError("qsd_solver", "Z^(q)(x) vanishes", q);
    auto partial = [&](std::size_t cut) {
        double acc = 0.0;
        for (std::size_t u = x + 1; u < cut; ++u) acc += row[u] * z[u] * mass[u];
        return (lambda + q) * acc / z[x];
    };
    double integral = partial(last);
    const std::size_t span = last - x;
    if (fam.nodes().truncated() && span >= 8) {
        integral = aitken_limit(partial(x + span / 2), partial(x + (3 * span) / 4), integral);
    }
    return 1.0 - integral;
}

struct RhoResult {
    double value = 0.0;
    double fd_value = 0.0;  // central difference of the target in q
    double fd_eps = 0.0;
    bool simple_root = false;
};

namespace detail {

// Z^(q)(0,ℓ) or W^(q)(0,ℓ) as a function of q.
inline double decay_target(const ScaleFamily& fam, BoundaryMode mode, double q) {
    const std::size_t last = fam.size() - 1;
    return mode == BoundaryMode::AccessibleBoth ? w_at_end(fam, -q, 0, last) : z_at_origin(fam, -q, last);
}

// Z^(-λ)(·,ℓ) or W^(-λ)(·,ℓ): the function whose value at x drives survival from x.
inline std::vector<double> survival_profile_raw(const ScaleFamily& fam, BoundaryMode mode, double lambda) {
    const std::size_t last = fam.size() - 1;
    const auto mass = fam.measure().masses();
    if (mode == BoundaryMode::AccessibleBoth) return volterra_column<double>(fam.w0(), mass, -lambda, last);
    return z_backward<double>(fam.w0(), mass, -lambda, last);
}

}  // namespace detail

/**
 * ρ = Σ W^(-λ0)(0,u) Z^(-λ0)(u) m_u, the q-derivative of Z^(q)(0) at
 * q = -λ0; with two killing ends ρ' = (W^(-κ0) ⊗ W^(-κ0))(0,ℓ).
 */
inline RhoResult rho(const ScaleFamily& fam, double lambda0, BoundaryMode mode) {
    const auto mass = fam.measure().masses();
    const std::size_t n = fam.size();
    auto row = scale_q_volterra(fam, -lambda0, 0);
    auto prof = detail::survival_profile_raw(fam, mode, lambda0);
    RhoResult r;
    for (std::size_t u = 1; u + 1 < n; ++u) r.value += row[u] * prof[u] * mass[u];
    r.fd_eps = 1e-4 * std::max(lambda0, 1e-3);
    const double up = detail::decay_target(fam, mode, -lambda0 + r.fd_eps);
    const double down = detail::decay_target(fam, mode, -lambda0 - r.fd_eps);
    r.fd_value = (up - down) / (2.0 * r.fd_eps);
    r.simple_root = up > 0.0 && down < 0.0;
    if (!(r.value > 0.0)) {
        throw InvariantFailure("qsd_solver", "ρ = " + io::format_double(r.value) + " is not positive: decay parameter mislocated");
    }
    return r;
}

struct YaglomResult {
    std::vector<double> profile;  // lim e^{λ0 t} P_x[τ > t]
    // Non-decreasing in x; meaningful in the entrance case only.
    std::vector<double> pi;       // Q-process stationary density against m
    double pi_mass = 0.0;
    bool profile_increasing = false;
};

inline YaglomResult yaglom_constants(const ScaleFamily& fam, BoundaryMode mode, const QsdDensity& qsd,
                                     const RhoResult& r) {
    const auto mass = fam.measure().masses();
    const std::size_t n = fam.size();
    const double lambda0 = qsd.lambda;
    auto row = scale_q_volterra(fam, -lambda0, 0);
    auto prof = detail::survival_profile_raw(fam, mode, lambda0);
    const double scale = mode == BoundaryMode::AccessibleBoth ? qsd.constant * r.value : lambda0 * r.value;
    YaglomResult y;
    y.profile.resize(n);
    y.pi.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        y.profile[i] = prof[i] / scale;
        y.pi[i] = row[i] * prof[i] / r.value;
    }
    for (std::size_t u = 1; u + 1 < n; ++u) y.pi_mass += y.pi[u] * mass[u];
    // Z(x_{N-1}, x_N) = 1 = Z(x_N, x_N), so equality is allowed up to rounding.
    y.profile_increasing = true;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (y.profile[i + 1] < y.profile[i] - 1e-12 * std::abs(y.profile[i])) y.profile_increasing = false;
    return y;
}

struct LrResult {
    bool pass = true;
    double worst_violation = 0.0;  // largest relative increase of the ratio
    std::size_t nodes_checked = 0;
};

inline constexpr double kResolvedRow = 1e6;

/**
 * ν_λ ≤_lr ν_λ' holds iff W^(-λ)(0,x)/W^(-λ')(0,x) is non-increasing.
 * Nodes where either row is not resolved above rounding are skipped.
 */
inline LrResult lr_order_check(const ScaleFamily& fam, double lambda, double lambda_p) {
    const auto mass = fam.measure().masses();
    const std::size_t last = fam.size() - 1;
    auto a = volterra_row_scaled(fam.w0(), mass, -lambda, 0, last);
    auto b = volterra_row_scaled(fam.w0(), mass, -lambda_p, 0, last);
    const double eps = std::numeric_limits<double>::epsilon();
    LrResult r;
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 1; j <= last; ++j) {
        const bool ok = std::abs(a.values[j]) > kResolvedRow * eps * a.scale[j] &&
                        std::abs(b.values[j]) > kResolvedRow * eps * b.scale[j] && b.values[j] > 0.0;
        if (!ok) continue;
        const double ratio = a.values[j] / b.values[j];
        if (!std::isnan(prev)) {
            r.worst_violation = std::max(r.worst_violation, (ratio - prev) / std::abs(prev));
        }
        prev = ratio;
        ++r.nodes_checked;
    }
    r.pass = r.worst_violation <= 1e-9;
    return r;
}

// ---------------------------------------------------------------------------

struct QsdReport {
    BoundaryMode mode = BoundaryMode::InaccessibleUpper;
    BoundaryClass boundary;
    DecayResult decay;
    bool has_qsd = false;
    std::string status;
    std::optional<QsdDensity> qsd;
    std::optional<RhoResult> rho;
    std::optional<YaglomResult> yaglom;
    // h(λ0/2; 0) = h^(0): positive exactly in the entrance case.
    std::optional<double> h_half;
};

/**
 * Full pipeline for one model. `longer` is the same model on a doubled
 * truncation and is required when the grid is truncated; results are
 * computed on `longer`.
 */
inline QsdReport build_qsd_report(const ScaleFamily& fam, BoundaryMode mode, const ScaleFamily* longer,
                                  const LadderOptions& opt = {}) {
    QsdReport rep;
    rep.mode = mode;
    const ScaleFamily* work = &fam;
    if (mode == BoundaryMode::InaccessibleUpper && fam.nodes().truncated()) {
        if (!longer) throw InvalidArgument("qsd_solver", "truncated grid needs a doubled truncation");
        rep.boundary = classify_boundary(fam, *longer);
        work = longer;
    } else {
        rep.boundary = classify_boundary(fam, mode);
    }
    rep.decay = decay_parameter(*work, mode, rep.boundary.kind, opt);
    if (rep.decay.no_qsd) {
        rep.status = "no QSD (λ₀=0)";
        return rep;
    }
    rep.has_qsd = true;
    rep.qsd = qsd_density(*work, rep.decay.value, mode);
    if (rep.boundary.kind == BoundaryKind::NonEntrance) {
        rep.status = "QSD family ν_λ for λ in (0, λ0]";
        return rep;
    }
    rep.rho = rho(*work, rep.decay.value, mode);
    rep.yaglom = yaglom_constants(*work, mode, *rep.qsd, *rep.rho);
    if (mode != BoundaryMode::AccessibleBoth) rep.h_half = h_func(*work, 0.0, 0.5 * rep.decay.value, 0);
    rep.status = "unique QSD";
    return rep;
}

}  // namespace scaleqsd
