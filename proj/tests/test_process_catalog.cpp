#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "scaleqsd/process.hpp"

using namespace scaleqsd;

namespace {

ProcessModel diffusion(GridPtr g, Coefficient b, Coefficient s, DiffusionGauge gauge,
                       BoundaryMode mode = BoundaryMode::AccessibleBoth) {
    return diffusion_model("test", std::move(b), std::move(s), std::move(g), mode, gauge);
}

}  // namespace

TEST(LevyBase, BrownianKernelIsTwiceTheIncrement) {
    auto g = build_uniform_grid(0.0, 1.0, 50);
    auto base = levy_base(brownian_levy(g, BoundaryMode::AccessibleBoth));
    for (std::size_t i = 0; i < g->size(); ++i)
        for (std::size_t j = i; j < g->size(); ++j) EXPECT_NEAR(base.w0(i, j), 2.0 * ((*g)[j] - (*g)[i]), 1e-14);
    EXPECT_EQ(base.w0(5, 3), 0.0);
    EXPECT_DOUBLE_EQ(base.measure[10], 1.0 / 50.0);
    EXPECT_EQ(base.measure[0], 0.0);
}

TEST(LevyBase, DriftKernelMatchesClosedForm) {
    auto g = build_uniform_grid(0.0, 20.0, 400, true);
    auto base = levy_base(brownian_levy(g, BoundaryMode::InaccessibleUpper, 1.0));
    for (std::size_t j : {1u, 37u, 200u, 400u}) {
        const double x = (*g)[j];
        EXPECT_NEAR(base.w0(0, j), 1.0 - std::exp(-2.0 * x), 1e-13);
        EXPECT_NEAR(base.w0(3, j), j >= 3 ? 1.0 - std::exp(-2.0 * (x - (*g)[3])) : 0.0, 1e-13);
    }
}

TEST(LevyBase, NonUniformGridUsesOffsets) {
    auto g = std::make_shared<const Grid>(std::vector<double>{0.0, 0.1, 0.35, 0.4, 1.0});
    auto base = levy_base(brownian_levy(g, BoundaryMode::AccessibleBoth, 0.5));
    EXPECT_NEAR(base.w0(1, 4), oracle::bm_w(0.0, 0.9, 0.5), 1e-14);
    EXPECT_NEAR(base.measure[2], 0.5 * (0.4 - 0.1), 1e-15);
}

TEST(ClosedForm, BrownianExamples) {
    auto g = build_uniform_grid(0.0, 1.0, 4);
    auto bm = brownian_levy(g, BoundaryMode::AccessibleBoth);
    EXPECT_NEAR(closed_form_wq(bm, 1.0, 1.0), 2.0 * std::sinh(std::sqrt(2.0)) / std::sqrt(2.0), 1e-14);
    EXPECT_NEAR(closed_form_wq(bm, -1.0, 1.0), 1.3969, 1e-4);
    EXPECT_NEAR(closed_form_wq(bm, -0.5 * oracle::pi * oracle::pi, 1.0), 0.0, 1e-15);
    EXPECT_EQ(closed_form_wq(bm, 2.0, 0.0), 0.0);
    EXPECT_EQ(closed_form_wq(bm, 2.0, -1.0), 0.0);
}

TEST(ClosedForm, DriftMatchesOracle) {
    auto g = build_uniform_grid(0.0, 1.0, 4);
    auto m = brownian_levy(g, BoundaryMode::AccessibleBoth, 1.0);
    for (double q : {-0.4, 0.0, 0.3, 1.5})
        for (double x : {0.1, 1.0, 7.0}) EXPECT_NEAR(closed_form_wq(m, q, x), oracle::bm_w(q, x, 1.0), 1e-12);
    // c² + 2q = 0 is the degenerate root.
    EXPECT_NEAR(closed_form_wq(m, -0.5, 2.0), 2.0 * std::exp(-2.0) * 2.0, 1e-12);
}

// ∫_0^∞ e^{-βx} W̃^(q)(x) dx = 1/(ψ(β) - q) for the jump model.
TEST(ClosedForm, JumpModelLaplaceTransform) {
    auto g = build_uniform_grid(0.0, 1.0, 4);
    LevySpec spec{1.0, 1.0, 0.5, 2.0};
    auto m = levy_model("jumps", spec, g, BoundaryMode::InaccessibleUpper);
    auto psi = [&](double b) { return 0.5 * b * b + spec.drift_c * b - spec.jump_rate * b / (spec.jump_theta + b); };
    for (double q : {0.0, 0.7}) {
        for (double beta : {3.0, 5.0}) {
            const double lt =
                oracle::simpson([&](double x) { return std::exp(-beta * x) * closed_form_wq(m, q, x); }, 0.0, 40.0, 40000);
            EXPECT_NEAR(lt, 1.0 / (psi(beta) - q), 1e-9) << "q=" << q << " beta=" << beta;
        }
    }
    EXPECT_NEAR(closed_form_wq(m, 0.0, 1e-9), 2e-9, 1e-15);
}

TEST(ClosedForm, RejectsDiffusions) {
    auto g = build_uniform_grid(0.0, 1.0, 8);
    auto d = diffusion(g, [](double) { return 0.0; }, [](double) { return 1.0; }, DiffusionGauge::Speed);
    EXPECT_THROW(closed_form_wq(d, 0.0, 0.5), InvalidArgument);
    EXPECT_THROW(levy_base(d), InvalidArgument);
    EXPECT_THROW(diffusion_base(brownian_levy(g, BoundaryMode::AccessibleBoth)), InvalidArgument);
}

TEST(LevyModel, RejectsBadParameters) {
    auto g = build_uniform_grid(0.0, 1.0, 8);
    EXPECT_THROW(levy_model("x", LevySpec{0.0, 0.0, 0.0, 1.0}, g, BoundaryMode::AccessibleBoth), InvalidArgument);
    EXPECT_THROW(levy_model("x", LevySpec{0.0, 1.0, -1.0, 1.0}, g, BoundaryMode::AccessibleBoth), InvalidArgument);
    EXPECT_THROW(levy_model("x", LevySpec{0.0, 1.0, 1.0, 0.0}, g, BoundaryMode::AccessibleBoth), InvalidArgument);
}

TEST(DiffusionBase, BrownianSpeedGauge) {
    auto g = build_uniform_grid(0.0, 1.0, 40);
    auto base = diffusion_base(diffusion(g, [](double) { return 0.0; }, [](double) { return 1.0; },
                                         DiffusionGauge::Speed));
    for (std::size_t j = 0; j < g->size(); ++j) EXPECT_NEAR(base.w0(0, j), (*g)[j], 1e-14);
    EXPECT_NEAR(base.w0(7, 30), (*g)[30] - (*g)[7], 1e-14);
    EXPECT_NEAR(base.measure[5], 2.0 / 40.0, 1e-15);
    EXPECT_EQ(base.measure[0], 0.0);
    EXPECT_EQ(base.measure[40], 0.0);
}

TEST(DiffusionBase, OrnsteinUhlenbeckScaleFunction) {
    auto g = build_uniform_grid(0.0, 3.0, 60);
    auto base = diffusion_base(diffusion(g, [](double x) { return -x; }, [](double) { return 1.0; },
                                         DiffusionGauge::Speed));
    for (std::size_t j : {10u, 33u, 60u}) {
        const double y = (*g)[j];
        const double s = oracle::simpson([](double u) { return std::exp(u * u); }, 0.0, y, 20000);
        EXPECT_NEAR(base.w0(0, j) / s, 1.0, 1e-10);
    }
    EXPECT_NEAR(base.measure[20], 2.0 * std::exp(-1.0) * 0.05, 1e-13);
}

TEST(DiffusionBase, CubicScaleDerivativeGauge) {
    auto g = build_uniform_grid(0.0, 3.0, 60, true);
    auto base = diffusion_base(diffusion(g, [](double x) { return -x * x * x; }, [](double) { return 1.0; },
                                         DiffusionGauge::ScaleDerivative, BoundaryMode::InaccessibleUpper));
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 20}, {5, 40}, {0, 60}, {45, 60}}) {
        const double x = (*g)[i], y = (*g)[j];
        const double ref = oracle::simpson([&](double u) { return std::exp(0.5 * (u * u * u * u - y * y * y * y)); },
                                           x, y, 40000);
        EXPECT_NEAR(base.w0(i, j) / ref, 1.0, 1e-9) << i << "," << j;
    }
    EXPECT_NEAR(base.measure[7], 2.0 * 0.05, 1e-15);
}

// Gauge change leaves exit ratios W(y,z)/W(x,z) unchanged.
TEST(DiffusionBase, GaugeInvariantRatios) {
    auto g = build_uniform_grid(0.0, 2.0, 80);
    auto b = [](double x) { return -x + 0.3 * std::sin(3 * x); };
    auto s = [](double x) { return 1.0 + 0.2 * x; };
    auto speed = diffusion_base(diffusion(g, b, s, DiffusionGauge::Speed));
    auto deriv = diffusion_base(diffusion(g, b, s, DiffusionGauge::ScaleDerivative));
    for (std::size_t y : {3u, 20u, 50u, 79u}) {
        const double r1 = speed.w0(y, 80) / speed.w0(0, 80);
        const double r2 = deriv.w0(y, 80) / deriv.w0(0, 80);
        EXPECT_NEAR(r1, r2, 1e-12);
    }
    // W(x,y) m_y is gauge invariant as well.
    EXPECT_NEAR(speed.w0(4, 30) * speed.measure[30], deriv.w0(4, 30) * deriv.measure[30], 1e-13);
}

TEST(DiffusionBase, VanishingSigmaRejected) {
    auto g = build_uniform_grid(0.0, 1.0, 4);
    auto d = diffusion(g, [](double) { return 0.0; }, [](double x) { return x - 0.5; }, DiffusionGauge::Speed);
    EXPECT_THROW(diffusion_base(d), InvalidArgument);
}

TEST(DiffusionBase, SpeedGaugeOverflowReported) {
    auto g = build_uniform_grid(0.0, 12.0, 240, true);
    auto d = diffusion(g, [](double x) { return -x * x * x; }, [](double) { return 1.0; }, DiffusionGauge::Speed,
                       BoundaryMode::InaccessibleUpper);
    EXPECT_THROW(diffusion_base(d), InvalidArgument);
}

TEST(InterpolateSamples, LinearBetweenNodes) {
    auto g = build_uniform_grid(0.0, 1.0, 4);
    auto f = interpolate_samples(g, {0.0, 1.0, 4.0, 9.0, 16.0});
    EXPECT_DOUBLE_EQ(f(0.125), 0.5);
    EXPECT_DOUBLE_EQ(f(0.5), 4.0);
    EXPECT_DOUBLE_EQ(f(-1.0), 0.0);
    EXPECT_DOUBLE_EQ(f(2.0), 16.0);
    EXPECT_THROW(interpolate_samples(g, {1.0}), InvalidArgument);
}

TEST(SimulatePath, TrivialCases) {
    auto g = build_uniform_grid(0.0, 1.0, 10);
    auto bm = brownian_levy(g, BoundaryMode::AccessibleBoth);
    auto rng = path_stream(1, 0);
    auto p = simulate_path(bm, 0.5, 1e-3, 0.0, rng);
    EXPECT_EQ(p.exit, ExitSide::None);
    ASSERT_EQ(p.times.size(), 1u);
    EXPECT_EQ(p.values[0], 0.5);

    auto dead = simulate_path(bm, 0.0, 1e-3, 1.0, rng);
    EXPECT_EQ(dead.exit, ExitSide::Lower);
    EXPECT_EQ(dead.exit_time, 0.0);

    auto top = simulate_path(bm, 1.0, 1e-3, 1.0, rng);
    EXPECT_EQ(top.exit, ExitSide::Upper);

    EXPECT_THROW(simulate_path(bm, 0.5, 0.0, 1.0, rng), InvalidArgument);
    EXPECT_THROW(simulate_path(bm, 0.5, -1e-3, 1.0, rng), InvalidArgument);
    EXPECT_THROW(simulate_path(bm, 1.5, 1e-3, 1.0, rng), InvalidArgument);
    EXPECT_THROW(simulate_path(bm, -0.1, 1e-3, 1.0, rng), InvalidArgument);
    EXPECT_THROW(simulate_path(bm, 0.5, 1e-3, -1.0, rng), InvalidArgument);
}

TEST(SimulatePath, PathsStayInStateSpace) {
    auto g = build_uniform_grid(0.0, 1.0, 10);
    for (auto mode : {BoundaryMode::AccessibleBoth, BoundaryMode::AccessibleKillAtZeroOnly}) {
        auto bm = brownian_levy(g, mode, 0.5);
        for (std::uint64_t k = 0; k < 50; ++k) {
            auto rng = path_stream(99, k);
            auto p = simulate_path(bm, 0.7, 1e-3, 2.0, rng);
            ASSERT_EQ(p.times.size(), p.values.size());
            for (std::size_t i = 0; i + 1 < p.values.size(); ++i) {
                EXPECT_GT(p.values[i], 0.0);
                EXPECT_LT(p.values[i], 1.0);
                EXPECT_LT(p.times[i], p.times[i + 1]);
            }
            if (p.exit == ExitSide::None) {
                EXPECT_NEAR(p.times.back(), 2.0, 1e-12);
            }
            if (mode == BoundaryMode::AccessibleKillAtZeroOnly) {
                EXPECT_NE(p.exit, ExitSide::Upper);
            }
        }
    }
}

TEST(SimulatePath, JumpsOnlyUpward) {
    auto g = build_uniform_grid(0.0, 1.0, 10, true);
    auto m = levy_model("jumps", LevySpec{0.0, 1e-6, 5.0, 1.0}, g, BoundaryMode::InaccessibleUpper);
    auto rng = path_stream(3, 0);
    auto p = simulate_path(m, 1.0, 1e-2, 5.0, rng);
    for (std::size_t i = 0; i + 1 < p.values.size(); ++i) EXPECT_GE(p.values[i + 1], p.values[i] - 1e-4);
    EXPECT_GT(p.values.back(), 5.0);
}

TEST(PathStream, CounterBasedSeeding) {
    auto a = path_stream(42, 7), b = path_stream(42, 7), c = path_stream(42, 8), d = path_stream(43, 7);
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
    EXPECT_NE(va, d());
    EXPECT_NE(splitmix64(0), splitmix64(1));
}
