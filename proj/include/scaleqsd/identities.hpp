#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "scaleqsd/kernel.hpp"
#include "scaleqsd/qsd.hpp"
#include "scaleqsd/scale.hpp"

namespace scaleqsd {

/**
 * One row of the invariant table. `residual` is the largest violation
 * measured in the units of `budget`: an absolute residual for identities,
 * a relative excess for inequalities.
 */
struct IdentityCheck {
    std::string name;
    std::string detail;
    double residual = 0.0;
    double budget = 0.0;
    std::size_t violations = 0;
    bool pass = true;
};

struct IdentityReport {
    std::vector<IdentityCheck> checks;
    bool pass = true;

    void add(IdentityCheck c) {
        c.pass = c.violations == 0 && c.residual <= c.budget;
        pass = pass && c.pass;
        checks.push_back(std::move(c));
    }
    double worst(const std::string& name) const {
        double w = 0.0;
        for (const auto& c : checks)
            if (c.name == name) w = std::max(w, c.residual);
        return w;
    }
};

namespace detail {

inline std::string pair_label(double q, double r) {
    return "q=" + io::format_double(q) + ",r=" + io::format_double(r);
}

template <typename Real>
double max_abs_diff3(const Kernel<Real>& a, const Kernel<Real>& b, const Kernel<Real>& c, Real factor) {
    Real worst(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto ra = a.row(i), rb = b.row(i), rc = c.row(i);
        for (std::size_t t = 0; t < ra.size(); ++t) {
            const Real d = abs_value(ra[t] - rb[t] - factor * rc[t]);
            if (d > worst) worst = d;
        }
    }
    return static_cast<double>(worst);
}

}  // namespace detail

/**
 * Resolvent identities for W^(q) and Z^(q) over all pairs from `qs`,
 * evaluated in arithmetic type Real (the base kernel is converted once):
 *
 *   W^(q) - W^(r) = (q-r) W^(q) ⊗ W^(r)
 *   Z^(q) - Z^(r) = (q-r) W^(q) ⊗ Z^(r) = (q-r) W^(r) ⊗ Z^(q)
 */
template <typename Real>
void resolvent_checks(const ScaleFamily& fam, std::vector<double> qs, double budget, IdentityReport& rep) {
    std::sort(qs.begin(), qs.end());
    qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
    const auto& m = fam.measure();
    const auto w = kernel_cast<Real>(fam.w0());
    std::vector<Kernel<Real>> wk, zk;
    for (double q : qs) {
        require_finite_q(q);
        wk.push_back(q == 0.0 ? w : volterra_kernel<Real>(w, m, Real(q)));
        zk.push_back(z_kernel<Real>(wk.back(), m, Real(q)));
    }
    for (std::size_t a = 0; a < qs.size(); ++a) {
        for (std::size_t b = a + 1; b < qs.size(); ++b) {
            const Real d = Real(qs[a]) - Real(qs[b]);
            const auto label = detail::pair_label(qs[a], qs[b]);
            rep.add({"resolvent_w", label, detail::max_abs_diff3(wk[a], wk[b], otimes(wk[a], wk[b], m), d), budget});
            rep.add({"resolvent_z", label, detail::max_abs_diff3(zk[a], zk[b], otimes(wk[a], zk[b], m), d), budget});
            rep.add({"resolvent_z_sym", label, detail::max_abs_diff3(zk[a], zk[b], otimes(wk[b], zk[a], m), d), budget});
        }
    }
}

// Largest relative deviation |S - V| / |V| between two W^(q) kernels.
inline double max_rel_deviation(const Kernel<double>& s, const Kernel<double>& v) {
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto rs = s.row(i), rv = v.row(i);
        for (std::size_t t = 1; t < rv.size(); ++t) {
            if (rv[t] == 0.0) continue;
            worst = std::max(worst, std::abs(rs[t] - rv[t]) / std::abs(rv[t]));
        }
    }
    return worst;
}

inline IdentityCheck series_volterra_check(const ScaleFamily& fam, double q, const SeriesResult& s,
                                           double budget = 1e-10) {
    return {"series_volterra", "q=" + io::format_double(q) + ",terms=" + std::to_string(s.terms),
            max_rel_deviation(s.kernel, *fam.wq(q)), budget};
}

inline IdentityCheck series_volterra_check(const ScaleFamily& fam, double q, double budget = 1e-10) {
    return series_volterra_check(fam, q, scale_q_series(fam, q), budget);
}

inline constexpr double kBoundSlack = 1e-12;

// W^{⊗n} ≤ W W̄^{n-1} / (n-1)! entrywise for n = 1..max_n.
inline IdentityCheck power_bound_check(const ScaleFamily& fam, std::size_t max_n = 8) {
    const auto& w = fam.w0();
    const auto& wb = fam.wbar_kernel();
    IdentityCheck c{"power_bound", "n<=" + std::to_string(max_n), 0.0, kBoundSlack};
    for (std::size_t n = 1; n <= max_n; ++n) {
        auto p = fam.powers().power(n);
        const double fact = std::tgamma(static_cast<double>(n));
        for (std::size_t i = 0; i < w.size(); ++i) {
            auto rp = p->row(i), rw = w.row(i), rb = wb.row(i);
            for (std::size_t t = 0; t < rp.size(); ++t) {
                const double bound = rw[t] * std::pow(rb[t], static_cast<double>(n - 1)) / fact;
                const double excess = rp[t] - bound;
                if (excess > kBoundSlack * bound + std::numeric_limits<double>::min()) {
                    ++c.violations;
                    c.residual = std::max(c.residual, bound > 0.0 ? excess / bound : excess);
                }
            }
        }
    }
    return c;
}

// |Z^(q)(x,y)| ≤ 1 + |q| W̄ e^{|q| W̄} entrywise.
inline IdentityCheck z_bound_check(const ScaleFamily& fam, double q) {
    const auto wq = fam.wq(q);
    const auto z = z_kernel<double>(*wq, fam.measure(), q);
    const auto& wb = fam.wbar_kernel();
    IdentityCheck c{"z_bound", "q=" + io::format_double(q), 0.0, kBoundSlack};
    for (std::size_t i = 0; i < z.size(); ++i) {
        auto rz = z.row(i), rb = wb.row(i);
        for (std::size_t t = 0; t < rz.size(); ++t) {
            const double a = std::abs(q) * rb[t];
            const double bound = 1.0 + a * std::exp(a);
            const double excess = std::abs(rz[t]) - bound;
            if (excess > kBoundSlack * bound) {
                ++c.violations;
                c.residual = std::max(c.residual, excess / bound);
            }
        }
    }
    return c;
}

/**
 * W^(q)(x,y) < W^(r)(x,y) for q < r wherever y lies before the first
 * non-positive entry of the row W^(q)(x,·), i.e. q > -λ0 of [x,y].
 * Rounding-level ties count as violations only beyond kBoundSlack.
 */
inline IdentityCheck q_monotonicity_check(const ScaleFamily& fam, std::vector<double> qs) {
    std::sort(qs.begin(), qs.end());
    qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
    IdentityCheck c{"q_monotonicity", std::to_string(qs.size()) + " q values", 0.0, kBoundSlack};
    for (std::size_t a = 0; a + 1 < qs.size(); ++a) {
        const auto lo = fam.wq(qs[a]);
        const auto hi = fam.wq(qs[a + 1]);
        for (std::size_t i = 0; i < lo->size(); ++i) {
            auto rl = lo->row(i), rh = hi->row(i);
            for (std::size_t t = 1; t < rl.size(); ++t) {
                if (!(rl[t] > 0.0)) break;
                const double excess = rl[t] - rh[t];
                if (excess > kBoundSlack * std::abs(rh[t])) {
                    ++c.violations;
                    c.residual = std::max(c.residual, excess / std::abs(rh[t]));
                }
            }
        }
    }
    return c;
}

struct IdentityOptions {
    std::vector<double> qs{-1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    double resolvent_budget = 1e-11;
    bool quad_precision = false;
    bool series = true;
    std::size_t max_power = 8;
};

inline IdentityReport run_identity_suite(const ScaleFamily& fam, const IdentityOptions& opt) {
    IdentityReport rep;
    if (opt.quad_precision) {
        resolvent_checks<__float128>(fam, opt.qs, opt.resolvent_budget, rep);
    } else {
        resolvent_checks<double>(fam, opt.qs, opt.resolvent_budget, rep);
    }
    if (opt.series) {
        for (double q : opt.qs)
            if (q != 0.0) rep.add(series_volterra_check(fam, q));
    }
    rep.add(power_bound_check(fam, opt.max_power));
    for (double q : opt.qs) rep.add(z_bound_check(fam, q));
    rep.add(q_monotonicity_check(fam, opt.qs));
    return rep;
}

}  // namespace scaleqsd
