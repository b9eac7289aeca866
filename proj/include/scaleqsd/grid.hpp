#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "scaleqsd/errors.hpp"
#include "scaleqsd/io.hpp"

namespace scaleqsd {

/**
 * Ordered nodes x_0 < x_1 < ... < x_N discretizing the state interval.
 *
 * `truncated` marks grids whose right end is a numerical stand-in for an
 * infinite or inaccessible upper boundary; limits toward that boundary are
 * then evaluated at x_N and must be certified against a doubled truncation.
 */
class Grid {
public:
    Grid(std::vector<double> nodes, bool truncated = false)
        : nodes_(std::move(nodes)), truncated_(truncated) {
        if (nodes_.size() < 3) {
            throw InvalidArgument("grid_measure", "grid needs at least 2 intervals");
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!std::isfinite(nodes_[i])) {
                throw InvalidArgument("grid_measure", "non-finite node at index " + std::to_string(i));
            }
            if (i > 0 && !(nodes_[i] > nodes_[i - 1])) {
                throw InvalidArgument("grid_measure",
                                      "nodes must be strictly increasing (index " + std::to_string(i) + ")");
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    // Index of the last node.
    std::size_t last() const noexcept { return nodes_.size() - 1; }
    double operator[](std::size_t i) const noexcept { return nodes_[i]; }
    std::span<const double> nodes() const noexcept { return nodes_; }
    double left_end() const noexcept { return nodes_.front(); }
    double right_end() const noexcept { return nodes_.back(); }
    bool truncated() const noexcept { return truncated_; }

    // Cell width attached to node i by the midpoint rule; endpoints get the
    // half cell that lies inside the interval.
    double cell_width(std::size_t i) const noexcept {
        if (i == 0) return 0.5 * (nodes_[1] - nodes_[0]);
        if (i == last()) return 0.5 * (nodes_[i] - nodes_[i - 1]);
        return 0.5 * (nodes_[i + 1] - nodes_[i - 1]);
    }

    // Maps an abscissa to its node index; throws OffGrid if no node lies
    // within a relative tolerance of the local spacing.
    std::size_t index_of(double x) const {
        auto it = std::lower_bound(nodes_.begin(), nodes_.end(), x);
        std::size_t best = nodes_.size();
        double best_dist = 0.0;
        for (auto cand : {it, it == nodes_.begin() ? it : std::prev(it)}) {
            if (cand == nodes_.end()) continue;
            double d = std::abs(*cand - x);
            if (best == nodes_.size() || d < best_dist) {
                best = static_cast<std::size_t>(cand - nodes_.begin());
                best_dist = d;
            }
        }
        double spacing = nodes_[1] - nodes_[0];
        if (best < nodes_.size()) {
            std::size_t j = best == 0 ? 1 : best;
            spacing = nodes_[j] - nodes_[j - 1];
        }
        if (best == nodes_.size() || best_dist > 1e-9 * spacing + 1e-12 * std::abs(x)) {
            throw OffGrid("grid_measure", "abscissa " + io::format_double(x) + " is not a grid node");
        }
        return best;
    }

    // Largest node index with x_i <= x (clamped to [0, N]).
    std::size_t floor_index(double x) const noexcept {
        if (x <= nodes_.front()) return 0;
        if (x >= nodes_.back()) return last();
        auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
        return static_cast<std::size_t>(it - nodes_.begin()) - 1;
    }

    bool operator==(const Grid& other) const {
        return truncated_ == other.truncated_ && nodes_ == other.nodes_;
    }

private:
    std::vector<double> nodes_;
    bool truncated_;
};

using GridPtr = std::shared_ptr<const Grid>;

// n intervals of width (b - a) / n, i.e. n + 1 nodes.
inline GridPtr build_uniform_grid(double a, double b, std::size_t n, bool truncated = false) {
    if (!std::isfinite(a) || !std::isfinite(b)) {
        throw InvalidArgument("grid_measure", "grid endpoints must be finite");
    }
    if (!(a < b)) throw InvalidArgument("grid_measure", "grid requires a < b");
    if (n < 2) throw InvalidArgument("grid_measure", "grid requires n >= 2 intervals");
    std::vector<double> nodes(n + 1);
    const double h = (b - a) / static_cast<double>(n);
    for (std::size_t i = 0; i <= n; ++i) nodes[i] = a + h * static_cast<double>(i);
    nodes[n] = b;
    return std::make_shared<const Grid>(std::move(nodes), truncated);
}

inline bool same_grid(const GridPtr& a, const GridPtr& b) {
    return a == b || (a && b && *a == *b);
}

/**
 * Per-node masses approximating the reference measure m.
 *
 * Integrals over open intervals (x_i, x_j) are sums over strictly interior
 * nodes i < k < j. Atoms at the two endpoints default to zero.
 */
class DiscreteMeasure {
public:
    DiscreteMeasure(GridPtr grid, std::vector<double> masses) : grid_(std::move(grid)), masses_(std::move(masses)) {
        if (!grid_) throw InvalidArgument("grid_measure", "measure requires a grid");
        if (masses_.size() != grid_->size()) {
            throw InvalidArgument("grid_measure", "mass count does not match node count");
        }
        for (std::size_t i = 0; i < masses_.size(); ++i) {
            if (!std::isfinite(masses_[i]) || masses_[i] < 0.0) {
                throw InvalidArgument("grid_measure", "mass at node " + std::to_string(i) + " is negative or non-finite");
            }
        }
        prefix_.assign(masses_.size() + 1, 0.0);
        for (std::size_t i = 0; i < masses_.size(); ++i) prefix_[i + 1] = prefix_[i] + masses_[i];
    }

    const GridPtr& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return masses_.size(); }
    double operator[](std::size_t i) const noexcept { return masses_[i]; }
    std::span<const double> masses() const noexcept { return masses_; }
    double total() const noexcept { return prefix_.back(); }

    // m((x_i, x_j)): nodes strictly between i and j; zero when j <= i + 1.
    double open_interval_mass(std::size_t i, std::size_t j) const noexcept {
        if (j <= i + 1) return 0.0;
        return prefix_[j] - prefix_[i + 1];
    }

    double open_interval_mass(double x, double y) const {
        return open_interval_mass(grid_->index_of(x), grid_->index_of(y));
    }

private:
    GridPtr grid_;
    std::vector<double> masses_;
    std::vector<double> prefix_;
};

struct BoundaryAtoms {
    double left = 0.0;
    double right = 0.0;
};

// Midpoint-cell rule: interior mass m_i = density(x_i) * cell width.
inline DiscreteMeasure measure_from_density(const GridPtr& grid, std::span<const double> density,
                                            BoundaryAtoms atoms = {}) {
    if (density.size() != grid->size()) {
        throw InvalidArgument("grid_measure", "density sample count does not match node count");
    }
    std::vector<double> masses(grid->size(), 0.0);
    for (std::size_t i = 0; i < density.size(); ++i) {
        if (!std::isfinite(density[i]) || density[i] < 0.0) {
            throw InvalidArgument("grid_measure", "negative or non-finite density at node " + std::to_string(i));
        }
        if (i != 0 && i != grid->last()) masses[i] = density[i] * grid->cell_width(i);
    }
    masses.front() = atoms.left;
    masses.back() = atoms.right;
    return DiscreteMeasure(grid, std::move(masses));
}

template <typename F>
DiscreteMeasure measure_from_density_fn(const GridPtr& grid, F&& density, BoundaryAtoms atoms = {}) {
    std::vector<double> samples(grid->size());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = density((*grid)[i]);
    return measure_from_density(grid, samples, atoms);
}

inline void write_measure_csv(std::ostream& out, const DiscreteMeasure& m) {
    out << "node,mass\n";
    const auto& g = *m.grid();
    for (std::size_t i = 0; i < m.size(); ++i) {
        out << io::format_double(g[i]) << ',' << io::format_double(m[i]) << '\n';
    }
}

inline DiscreteMeasure read_measure_csv(std::istream& in, bool truncated = false) {
    auto rows = io::read_numeric_csv(in, 2);
    std::vector<double> nodes, masses;
    for (auto& r : rows) {
        nodes.push_back(r[0]);
        masses.push_back(r[1]);
    }
    return DiscreteMeasure(std::make_shared<const Grid>(std::move(nodes), truncated), std::move(masses));
}

}  // namespace scaleqsd
