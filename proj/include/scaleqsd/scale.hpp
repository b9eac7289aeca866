#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/kernel.hpp"
#include "scaleqsd/parallel.hpp"
#include "scaleqsd/process.hpp"

namespace scaleqsd {

inline constexpr double kPoleThreshold = 1e-13;

/**
 * W = W^(0) and m for one model, with lazily built ⊗-powers, the running
 * integral W̄ and a per-q cache of full W^(q) kernels.
 */
class ScaleFamily {
public:
    explicit ScaleFamily(BaseKernelPair base, double tol = 1e-12)
        : base_(std::make_shared<const BaseKernelPair>(std::move(base))),
          powers_(std::make_shared<PowerCache<double>>(base_->w0, base_->measure)),
          tol_(tol) {
        if (!(tol > 0.0)) throw InvalidArgument("scale_functions", "series tolerance must be positive");
        if (!base_->w0.all_finite()) throw InvalidArgument("scale_functions", "base kernel has non-finite entries");
    }

    const Kernel<double>& w0() const noexcept { return base_->w0; }
    const DiscreteMeasure& measure() const noexcept { return base_->measure; }
    const GridPtr& grid() const noexcept { return base_->w0.grid(); }
    const Grid& nodes() const noexcept { return *base_->w0.grid(); }
    std::size_t size() const noexcept { return base_->w0.size(); }
    double tol() const noexcept { return tol_; }
    const PowerCache<double>& powers() const noexcept { return *powers_; }

    const Kernel<double>& wbar_kernel() const {
        std::call_once(wbar_once_, [&] { wbar_ = std::make_unique<Kernel<double>>(wbar(w0(), measure())); });
        return *wbar_;
    }

    // Full W^(q) by forward marching, computed once per q.
    std::shared_ptr<const Kernel<double>> wq(double q) const;

private:
    std::shared_ptr<const BaseKernelPair> base_;
    std::shared_ptr<PowerCache<double>> powers_;
    double tol_;
    mutable std::once_flag wbar_once_;
    mutable std::unique_ptr<Kernel<double>> wbar_;
    mutable std::mutex cache_mutex_;
    mutable std::map<double, std::shared_ptr<const Kernel<double>>> wq_cache_;
};

inline void require_finite_q(double q) {
    if (!std::isfinite(q)) throw InvalidArgument("scale_functions", "q must be finite");
}

// ---------------------------------------------------------------------------
// Volterra marching

/**
 * Row x_i of W^(q) from f(y) = W(x,y) + q Σ_{x<u<y} f(u) W(u,y) m_u.
 * The sum only involves nodes left of y, so the row is built left to right;
 * contributions are pushed forward row by row to keep memory access
 * contiguous. Entries past `last` are not computed.
 */
template <typename Real>
std::vector<Real> volterra_row(const Kernel<Real>& w, std::span<const Real> mass, Real q, std::size_t i,
                               std::size_t last) {
    const std::size_t n = w.size();
    last = std::min(last, n - 1);
    std::vector<Real> f(n, Real(0));
    if (last <= i) return f;
    auto wrow = w.row(i);
    for (std::size_t j = i; j <= last; ++j) f[j] = wrow[j - i];
    for (std::size_t k = i + 1; k < last; ++k) {
        const Real a = q * f[k] * mass[k];
        if (a == Real(0)) continue;
        auto krow = w.row(k);
        for (std::size_t j = k + 1; j <= last; ++j) f[j] += a * krow[j - k];
    }
    return f;
}

// Forward row together with A_j = |W(x,x_j)| + Σ |q f_k m_k W(x_k,x_j)|, the
// magnitude of the terms that cancel in f_j. eps·A_j estimates the error
// inherited from rounding in W and in the marching.
struct RowWithScale {
    std::vector<double> values;
    std::vector<double> scale;
};

inline RowWithScale volterra_row_scaled(const Kernel<double>& w, std::span<const double> mass, double q, std::size_t i,
                                        std::size_t last) {
    const std::size_t n = w.size();
    last = std::min(last, n - 1);
    RowWithScale r{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    if (last <= i) return r;
    auto wrow = w.row(i);
    for (std::size_t j = i; j <= last; ++j) {
        r.values[j] = wrow[j - i];
        r.scale[j] = std::abs(wrow[j - i]);
    }
    for (std::size_t k = i + 1; k < last; ++k) {
        const double a = q * r.values[k] * mass[k];
        if (a == 0.0) continue;
        const double abs_a = std::abs(a);
        auto krow = w.row(k);
        for (std::size_t j = k + 1; j <= last; ++j) {
            r.values[j] += a * krow[j - k];
            r.scale[j] += abs_a * std::abs(krow[j - k]);
        }
    }
    return r;
}

template <typename Real>
Kernel<Real> volterra_kernel(const Kernel<Real>& w, const DiscreteMeasure& m, Real q) {
    detail::require_same_grid(w.grid(), m.grid(), "volterra_kernel");
    const auto mass = detail::masses_as<Real>(m);
    Kernel<Real> out(w.grid(), "W^(q)");
    const std::size_t n = w.size();
    parallel_for(0, n, [&](std::size_t i) {
        auto f = volterra_row<Real>(w, mass, q, i, n - 1);
        auto orow = out.row(i);
        for (std::size_t t = 0; t < orow.size(); ++t) orow[t] = f[i + t];
    });
    return out;
}

/**
 * Column y_j of W^(q) from c(x) = W(x,y) + q Σ_{x<u<y} W(x,u) c(u) m_u,
 * marched right to left. Entries x > y are zero.
 */
template <typename Real>
std::vector<Real> volterra_column(const Kernel<Real>& w, std::span<const Real> mass, Real q, std::size_t j) {
    std::vector<Real> c(w.size(), Real(0));
    for (std::size_t x = j + 1; x-- > 0;) {
        auto wrow = w.row(x);
        Real acc(0);
        for (std::size_t u = x + 1; u < j; ++u) acc += wrow[u - x] * c[u] * mass[u];
        c[x] = wrow[j - x] + q * acc;
    }
    return c;
}

inline std::shared_ptr<const Kernel<double>> ScaleFamily::wq(double q) const {
    require_finite_q(q);
    {
        std::lock_guard lock(cache_mutex_);
        auto it = wq_cache_.find(q);
        if (it != wq_cache_.end()) return it->second;
    }
    std::shared_ptr<const Kernel<double>> k;
    if (q == 0.0) {
        k = std::make_shared<const Kernel<double>>(w0());
    } else {
        auto full = volterra_kernel<double>(w0(), measure(), q);
        full.set_label("W^(q) q=" + io::format_double(q));
        k = std::make_shared<const Kernel<double>>(std::move(full));
    }
    std::lock_guard lock(cache_mutex_);
    return wq_cache_.emplace(q, std::move(k)).first->second;
}

// Row x_i of W^(q) (forward marching).
inline std::vector<double> scale_q_volterra(const ScaleFamily& fam, double q, std::size_t i) {
    require_finite_q(q);
    if (i >= fam.size()) throw InvalidArgument("scale_functions", "row index out of range");
    return volterra_row<double>(fam.w0(), fam.measure().masses(), q, i, fam.size() - 1);
}

// Column y_j of W^(q) (backward marching).
inline std::vector<double> scale_q_column(const ScaleFamily& fam, double q, std::size_t j) {
    require_finite_q(q);
    if (j >= fam.size()) throw InvalidArgument("scale_functions", "column index out of range");
    return volterra_column<double>(fam.w0(), fam.measure().masses(), q, j);
}

// ---------------------------------------------------------------------------
// Series

struct SeriesResult {
    Kernel<double> kernel;
    std::size_t terms = 0;      // number of powers W^{⊗(n+1)} summed
    double tail_bound = 0.0;    // bound on the omitted remainder, uniform over the grid
};

/**
 * Σ_{n=0}^{n*} q^n W^{⊗(n+1)} with n* the first order at which the
 * exponential majorant of the remainder drops below tol, both absolutely
 * and relative to W, uniformly over all grid pairs.
 */
inline SeriesResult scale_q_series(const ScaleFamily& fam, double q) {
    require_finite_q(q);
    if (q == 0.0) return {fam.w0(), 1, 0.0};
    const auto& wb = fam.wbar_kernel();
    double w_max = 0.0, wbar_max = 0.0;
    for (double v : fam.w0().packed()) w_max = std::max(w_max, v);
    for (double v : wb.packed()) wbar_max = std::max(wbar_max, v);
    const double scale = std::max(1.0, w_max);
    std::size_t n_star = 1;
    double bound = series_tail_bound(scale, wbar_max, q, n_star);
    while (bound > fam.tol()) {
        ++n_star;
        bound = series_tail_bound(scale, wbar_max, q, n_star);
        if (n_star > 2000) throw InvalidArgument("scale_functions", "series does not reach tolerance within 2000 terms");
    }
    Kernel<double> sum(fam.grid(), "W^(q) series q=" + io::format_double(q));
    double qn = 1.0;
    for (std::size_t n = 0; n < n_star; ++n) {
        auto p = fam.powers().power(n + 1);
        for (std::size_t i = 0; i < sum.size(); ++i) {
            auto dst = sum.row(i);
            auto s = p->row(i);
            for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += qn * s[t];
        }
        qn *= q;
    }
    return {std::move(sum), n_star, series_tail_bound(w_max, wbar_max, q, n_star)};
}

// ---------------------------------------------------------------------------
// Z^(q)

struct ZFunction {
    double q = 0.0;
    std::size_t z_ref = 0;
    std::vector<double> values;  // Z^(q)(x_i, z_ref) for i <= z_ref; 1 beyond
};

// Z^(q)(x,z) = 1 + q Σ_{x<u<z} W^(q)(x,u) m_u from the W^(q) kernel.
inline ZFunction z_q(const ScaleFamily& fam, double q, std::size_t z_ref) {
    require_finite_q(q);
    if (z_ref >= fam.size()) throw InvalidArgument("scale_functions", "reference node out of range");
    ZFunction z{q, z_ref, std::vector<double>(fam.size(), 1.0)};
    if (q == 0.0) return z;
    auto w = fam.wq(q);
    const auto& m = fam.measure();
    for (std::size_t x = 0; x < z_ref; ++x) {
        auto row = w->row(x);
        double acc = 0.0;
        for (std::size_t u = x + 1; u < z_ref; ++u) acc += row[u - x] * m[u];
        z.values[x] = 1.0 + q * acc;
    }
    return z;
}

template <typename Real>
std::vector<Real> z_backward(const Kernel<Real>& w, std::span<const Real> mass, Real q, std::size_t z_ref) {
    std::vector<Real> f(w.size(), Real(1));
    for (std::size_t y = z_ref; y-- > 0;) {
        auto wrow = w.row(y);
        Real acc(0);
        for (std::size_t u = y + 1; u < z_ref; ++u) acc += wrow[u - y] * f[u] * mass[u];
        f[y] = Real(1) + q * acc;
    }
    return f;
}

// Z^(q)(y,z) from f(y) = 1 + q Σ_{y<u<z} W(y,u) f(u) m_u, marched from z down.
inline ZFunction z_q_volterra(const ScaleFamily& fam, double q, std::size_t z_ref) {
    require_finite_q(q);
    if (z_ref >= fam.size()) throw InvalidArgument("scale_functions", "reference node out of range");
    return {q, z_ref, z_backward<double>(fam.w0(), fam.measure().masses(), q, z_ref)};
}

// Z^(q)(x_i, x_j) for all i <= j as a kernel, from W^(q).
template <typename Real>
Kernel<Real> z_kernel(const Kernel<Real>& wq, const DiscreteMeasure& m, Real q) {
    Kernel<Real> out(wq.grid(), "Z^(q)");
    for (std::size_t i = 0; i < wq.size(); ++i) {
        auto wrow = wq.row(i);
        auto zrow = out.row(i);
        Real acc(0);
        for (std::size_t t = 0; t < zrow.size(); ++t) {
            zrow[t] = Real(1) + q * acc;
            acc += wrow[t] * Real(m[i + t]);
        }
        zrow[0] = Real(1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exit problems

namespace detail {

inline void require_ordered(std::size_t x, std::size_t y, std::size_t z, bool strict_upper) {
    if (!(x < y) || y > z || (strict_upper && !(y < z))) {
        throw InvalidArgument("scale_functions", "exit problem requires x < y <= z");
    }
}

inline double checked_denominator(double d, double q) {
    if (!(d > kPoleThreshold)) {
        throw PoleError("scale_functions", "W^(q)(x,z) is not positive: q lies at or beyond -λ0 of [x,z]", q);
    }
    return d;
}

}  // namespace detail

// E_y[e^{-q τ_x^-}, τ_x^- < τ_z^+] = W^(q)(y,z) / W^(q)(x,z).
inline double exit_laplace_down(const ScaleFamily& fam, double q, std::size_t x, std::size_t y, std::size_t z) {
    detail::require_ordered(x, y, z, false);
    auto col = scale_q_column(fam, q, z);
    return col[y] / detail::checked_denominator(col[x], q);
}

// E_y[e^{-q τ_z^+}, τ_z^+ < τ_x^-] = Z^(q)(y,z) - W^(q)(y,z)/W^(q)(x,z) Z^(q)(x,z).
inline double exit_laplace_up(const ScaleFamily& fam, double q, std::size_t x, std::size_t y, std::size_t z) {
    detail::require_ordered(x, y, z, true);
    auto col = scale_q_column(fam, q, z);
    auto zf = z_q_volterra(fam, q, z);
    const double ratio = col[y] / detail::checked_denominator(col[x], q);
    return zf.values[y] - ratio * zf.values[x];
}

/**
 * Density against m of the q-potential of X started at y and killed on
 * leaving (a, z):  W^(q)(a,u) W^(q)(y,z)/W^(q)(a,z) - W^(q)(y,u).
 * Vanishes for u outside (a, z).
 */
class IntervalPotential {
public:
    IntervalPotential(const ScaleFamily& fam, double q, std::size_t a, std::size_t y, std::size_t z)
        : a_(a), z_(z) {
        if (!(a < y && y < z)) throw InvalidArgument("scale_functions", "potential density requires a < y < z");
        const auto mass = fam.measure().masses();
        row_a_ = volterra_row<double>(fam.w0(), mass, q, a, z);
        row_y_ = volterra_row<double>(fam.w0(), mass, q, y, z);
        ratio_ = row_y_[z] / detail::checked_denominator(row_a_[z], q);
    }

    double operator()(std::size_t u) const {
        if (u <= a_ || u >= z_) return 0.0;
        return row_a_[u] * ratio_ - row_y_[u];
    }

    // Σ_u density(u) m_u, i.e. E_y[∫_0^τ e^{-qt} dt] for the killed process.
    double total(const DiscreteMeasure& m) const {
        double acc = 0.0;
        for (std::size_t u = a_ + 1; u < z_; ++u) acc += (*this)(u) * m[u];
        return acc;
    }

private:
    std::size_t a_, z_;
    std::vector<double> row_a_, row_y_;
    double ratio_ = 0.0;
};

inline double potential_density_interval(const ScaleFamily& fam, double q, std::size_t a, std::size_t y,
                                         std::size_t z, std::size_t u) {
    if (u <= a || u >= z) return 0.0;
    return IntervalPotential(fam, q, a, y, z)(u);
}

// E_y[τ_a^- ∧ τ_z^+] as Σ_u r^(0)(y,u) m_u.
inline double mean_exit_time(const ScaleFamily& fam, std::size_t a, std::size_t y, std::size_t z) {
    return IntervalPotential(fam, 0.0, a, y, z).total(fam.measure());
}

// ---------------------------------------------------------------------------
// Hitting-time transform g^(q)(x,y) = E_y[e^{-q τ_x}]

enum class GqMethod {
    ZRatio,  // Z^(q)(y,zmax) / Z^(q)(x,zmax)
    WLimit,  // W^(q)(y,z) / W^(q)(x,z), stabilized in z
};

struct GqResult {
    double value = 0.0;
    // |value(z_max) - value(z_half)| with z_half the node halfway between y and z_max.
    double sensitivity = 0.0;
};

namespace detail {

inline double z_ratio_at(const ScaleFamily& fam, double q, std::size_t x, std::size_t y, std::size_t z) {
    auto zf = z_q_volterra(fam, q, z);
    const double den = zf.values[x];
    if (!(den > kPoleThreshold)) {
        throw PoleError("scale_functions", "Z^(q)(x) is not positive: q lies at or beyond the hitting threshold", q);
    }
    return zf.values[y] / den;
}

}  // namespace detail

inline GqResult g_q(const ScaleFamily& fam, double q, std::size_t x, std::size_t y, GqMethod method = GqMethod::ZRatio) {
    require_finite_q(q);
    const std::size_t zmax = fam.size() - 1;
    if (!(x < y) || y >= zmax) throw InvalidArgument("scale_functions", "g_q requires x < y < right end");
    const std::size_t zhalf = y + (zmax - y + 1) / 2;
    auto eval = [&](std::size_t z) {
        if (method == GqMethod::ZRatio) return detail::z_ratio_at(fam, q, x, y, z);
        auto col = scale_q_column(fam, q, z);
        return col[y] / detail::checked_denominator(col[x], q);
    };
    const double full = eval(zmax);
    const double half = zhalf < zmax ? eval(zhalf) : full;
    return {full, std::abs(full - half)};
}

// r^(q)(y,u) = g^(q)(a,y) W^(q)(a,u) - W^(q)(y,u) on [a, ∞) (truncated grid).
inline double potential_density_halfline(const ScaleFamily& fam, double q, std::size_t a, std::size_t y, std::size_t u,
                                         GqMethod method = GqMethod::ZRatio) {
    if (u <= a || y <= a) return 0.0;
    const auto g = g_q(fam, q, a, y, method).value;
    const auto mass = fam.measure().masses();
    const auto row_a = volterra_row<double>(fam.w0(), mass, q, a, u);
    const double wyu = u > y ? volterra_row<double>(fam.w0(), mass, q, y, u)[u] : 0.0;
    return g * row_a[u] - wyu;
}

}  // namespace scaleqsd
