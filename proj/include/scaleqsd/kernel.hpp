#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/grid.hpp"
#include "scaleqsd/io.hpp"
#include "scaleqsd/parallel.hpp"

namespace scaleqsd {

template <typename Real>
constexpr Real abs_value(Real x) {
    return x < Real(0) ? -x : x;
}

/**
 * Table K(x_i, x_j) for i <= j on a grid; entries with i > j are logically
 * zero and not stored. Row i is stored contiguously as K[i][i..N].
 *
 * Real is a plain arithmetic type (double, long double or __float128); the
 * algebra below only uses + - * / and comparisons.
 */
template <typename Real = double>
class Kernel {
public:
    Kernel() = default;

    Kernel(GridPtr grid, std::string label = {})
        : grid_(std::move(grid)), n_(grid_ ? grid_->size() : 0), label_(std::move(label)) {
        values_.assign(n_ * (n_ + 1) / 2, Real(0));
    }

    const GridPtr& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return n_; }
    const std::string& label() const noexcept { return label_; }
    void set_label(std::string l) { label_ = std::move(l); }

    Real operator()(std::size_t i, std::size_t j) const noexcept {
        return i > j ? Real(0) : values_[offset(i) + (j - i)];
    }
    Real& at(std::size_t i, std::size_t j) noexcept { return values_[offset(i) + (j - i)]; }

    // Entries K[i][i..N]; element t is K(x_i, x_{i+t}).
    std::span<Real> row(std::size_t i) noexcept { return {values_.data() + offset(i), n_ - i}; }
    std::span<const Real> row(std::size_t i) const noexcept { return {values_.data() + offset(i), n_ - i}; }

    std::span<const Real> packed() const noexcept { return values_; }

    bool all_finite() const {
        for (const Real& v : values_) {
            if (!(v == v) || abs_value(v) > Real(std::numeric_limits<double>::max())) return false;
        }
        return true;
    }

private:
    std::size_t offset(std::size_t i) const noexcept { return i * n_ - (i * (i - (i > 0 ? 1 : 0))) / 2; }

    GridPtr grid_;
    std::size_t n_ = 0;
    std::string label_;
    std::vector<Real> values_;
};

namespace detail {

inline void require_same_grid(const GridPtr& a, const GridPtr& b, const char* what) {
    if (!same_grid(a, b)) throw InvalidArgument("kernel_algebra", std::string("grid mismatch in ") + what);
}

template <typename Real>
std::vector<Real> masses_as(const DiscreteMeasure& m) {
    std::vector<Real> out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = Real(m[i]);
    return out;
}

}  // namespace detail

template <typename To, typename From>
Kernel<To> kernel_cast(const Kernel<From>& k) {
    Kernel<To> out(k.grid(), k.label());
    for (std::size_t i = 0; i < k.size(); ++i) {
        auto src = k.row(i);
        auto dst = out.row(i);
        for (std::size_t t = 0; t < src.size(); ++t) dst[t] = To(src[t]);
    }
    return out;
}

/**
 * (f ⊗ g)(x_i, x_j) = sum over i < k < j of f(x_i, x_k) g(x_k, x_j) m_k.
 * The open interval excludes both endpoints, so the result vanishes for
 * j <= i + 1. Rows are independent and computed in parallel.
 */
template <typename Real>
Kernel<Real> otimes(const Kernel<Real>& f, const Kernel<Real>& g, const DiscreteMeasure& m) {
    detail::require_same_grid(f.grid(), g.grid(), "otimes");
    detail::require_same_grid(f.grid(), m.grid(), "otimes");
    const std::size_t n = f.size();
    Kernel<Real> out(f.grid(), f.label() + "⊗" + g.label());
    const auto mass = detail::masses_as<Real>(m);
    parallel_for(0, n, [&](std::size_t i) {
        auto orow = out.row(i);
        auto frow = f.row(i);
        for (std::size_t k = i + 1; k + 1 < n; ++k) {
            const Real a = frow[k - i] * mass[k];
            if (a == Real(0)) continue;
            auto grow = g.row(k);
            Real* dst = orow.data() + (k - i);
            const Real* src = grow.data();
            const std::size_t len = n - k;
            for (std::size_t t = 1; t < len; ++t) dst[t] += a * src[t];
        }
    });
    return out;
}

// f^{⊗1} = f, f^{⊗n} = f ⊗ f^{⊗(n-1)}.
template <typename Real>
Kernel<Real> kernel_power(const Kernel<Real>& w, const DiscreteMeasure& m, std::size_t n) {
    if (n == 0) throw InvalidArgument("kernel_algebra", "kernel power order must be >= 1");
    Kernel<Real> acc = w;
    for (std::size_t k = 2; k <= n; ++k) acc = otimes(w, acc, m);
    acc.set_label(w.label() + "^⊗" + std::to_string(n));
    return acc;
}

// W̄(x_i, x_j) = sum over i < k < j of W(x_i, x_k) m_k.
template <typename Real>
Kernel<Real> wbar(const Kernel<Real>& w, const DiscreteMeasure& m) {
    detail::require_same_grid(w.grid(), m.grid(), "wbar");
    Kernel<Real> out(w.grid(), "bar(" + w.label() + ")");
    const std::size_t n = w.size();
    for (std::size_t i = 0; i < n; ++i) {
        auto wrow = w.row(i);
        auto orow = out.row(i);
        Real acc(0);
        for (std::size_t t = 1; t < orow.size(); ++t) {
            orow[t] = acc;
            acc += wrow[t] * Real(m[i + t]);
        }
    }
    return out;
}

/**
 * Remainder bound sum_{k >= n} |q|^k w wbar^k / k! of the exponential
 * majorant of the resolvent series. Evaluated from the first term in log
 * space so that large |q| wbar does not overflow before the terms decay.
 */
inline double series_tail_bound(double w_xy, double wbar_xy, double q, std::size_t n) {
    if (w_xy < 0.0 || wbar_xy < 0.0 || !std::isfinite(w_xy) || !std::isfinite(wbar_xy)) {
        throw InvalidArgument("kernel_algebra", "tail bound requires finite non-negative inputs");
    }
    if (!std::isfinite(q)) throw InvalidArgument("kernel_algebra", "tail bound requires finite q");
    const double a = std::abs(q) * wbar_xy;
    if (w_xy == 0.0) return 0.0;
    if (a == 0.0) return n == 0 ? w_xy : 0.0;
    // log of the first term a^n / n!
    double log_term = static_cast<double>(n) * std::log(a) - std::lgamma(static_cast<double>(n) + 1.0);
    double term = 1.0;  // relative to exp(log_term)
    double sum = 0.0;
    for (std::size_t k = n;; ++k) {
        sum += term;
        term *= a / static_cast<double>(k + 1);
        if (term < 1e-17 * sum && static_cast<double>(k + 1) > a) break;
        if (k > n + 100000) break;
    }
    return w_xy * std::exp(log_term + std::log(sum));
}

// Lazily extended list of W^{⊗n}, n = 1, 2, ...; safe to share between
// threads (extension happens under a lock, entries never change afterwards).
template <typename Real = double>
class PowerCache {
public:
    PowerCache(Kernel<Real> w, DiscreteMeasure m) : m_(std::move(m)) {
        detail::require_same_grid(w.grid(), m_.grid(), "PowerCache");
        powers_.push_back(std::make_shared<const Kernel<Real>>(std::move(w)));
    }

    const DiscreteMeasure& measure() const noexcept { return m_; }

    // Returns W^{⊗n}, n >= 1.
    std::shared_ptr<const Kernel<Real>> power(std::size_t n) const {
        if (n == 0) throw InvalidArgument("kernel_algebra", "kernel power order must be >= 1");
        std::lock_guard lock(mutex_);
        while (powers_.size() < n) {
            auto next = otimes(*powers_.front(), *powers_.back(), m_);
            next.set_label(powers_.front()->label() + "^⊗" + std::to_string(powers_.size() + 1));
            powers_.push_back(std::make_shared<const Kernel<Real>>(std::move(next)));
        }
        return powers_[n - 1];
    }

    std::size_t cached() const {
        std::lock_guard lock(mutex_);
        return powers_.size();
    }

private:
    DiscreteMeasure m_;
    mutable std::mutex mutex_;
    mutable std::vector<std::shared_ptr<const Kernel<Real>>> powers_;
};

template <typename Real>
void write_kernel_csv(std::ostream& out, const Kernel<Real>& k) {
    out << "x,y,value\n";
    const auto& g = *k.grid();
    for (std::size_t i = 0; i < k.size(); ++i) {
        auto r = k.row(i);
        for (std::size_t t = 0; t < r.size(); ++t) {
            out << io::format_double(g[i]) << ',' << io::format_double(g[i + t]) << ','
                << io::format_double(static_cast<double>(r[t])) << '\n';
        }
    }
}

// Binary fixture format: "SQKB", u64 node count, nodes (f64), then the
// stored rows K[i][i..N] in row-major order (f64, native endianness).
inline void write_kernel_binary(std::ostream& out, const Kernel<double>& k) {
    out.write("SQKB", 4);
    std::uint64_t n = k.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    auto nodes = k.grid()->nodes();
    out.write(reinterpret_cast<const char*>(nodes.data()), static_cast<std::streamsize>(nodes.size() * sizeof(double)));
    auto vals = k.packed();
    out.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(double)));
}

inline Kernel<double> read_kernel_binary(std::istream& in, bool truncated = false) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SQKB", 4) != 0) throw InvalidArgument("kernel_algebra", "bad kernel dump magic");
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    std::vector<double> nodes(n);
    in.read(reinterpret_cast<char*>(nodes.data()), static_cast<std::streamsize>(n * sizeof(double)));
    Kernel<double> k(std::make_shared<const Grid>(std::move(nodes), truncated));
    for (std::size_t i = 0; i < n; ++i) {
        auto r = k.row(i);
        in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(double)));
    }
    if (!in) throw InvalidArgument("kernel_algebra", "truncated kernel dump");
    return k;
}

}  // namespace scaleqsd
