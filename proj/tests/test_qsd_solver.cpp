#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "scaleqsd/identities.hpp"
#include "scaleqsd/qsd.hpp"

using namespace scaleqsd;

namespace {

constexpr double kPi2 = oracle::pi * oracle::pi;

std::unique_ptr<ScaleFamily> bm(double b, std::size_t n, double c, BoundaryMode mode) {
    const bool trunc = mode == BoundaryMode::InaccessibleUpper;
    return std::make_unique<ScaleFamily>(levy_base(brownian_levy(build_uniform_grid(0.0, b, n, trunc), mode, c)));
}

std::unique_ptr<ScaleFamily> diffusion(Coefficient drift, double b, std::size_t n, DiffusionGauge gauge) {
    return std::make_unique<ScaleFamily>(diffusion_base(
        diffusion_model("d", std::move(drift), [](double) { return 1.0; }, build_uniform_grid(0.0, b, n, true),
                        BoundaryMode::InaccessibleUpper, gauge)));
}

std::unique_ptr<ScaleFamily> cubic(double L, std::size_t n) {
    return diffusion([](double x) { return -x * x * x; }, L, n, DiffusionGauge::ScaleDerivative);
}

// Shared expensive families.
struct Models {
    std::unique_ptr<ScaleFamily> unit = bm(1.0, 1000, 0.0, BoundaryMode::AccessibleBoth);
    std::unique_ptr<ScaleFamily> drift20 = bm(20.0, 1000, 1.0, BoundaryMode::InaccessibleUpper);
    std::unique_ptr<ScaleFamily> drift40 = bm(40.0, 2000, 1.0, BoundaryMode::InaccessibleUpper);
    std::unique_ptr<ScaleFamily> cubic6 = cubic(6.0, 600);
    std::unique_ptr<ScaleFamily> cubic12 = cubic(12.0, 1200);
};

const Models& models() {
    static Models m;
    return m;
}

}  // namespace

TEST(Classify, FiniteIntervalsAreEntrance) {
    auto c = classify_boundary(*models().unit, BoundaryMode::AccessibleBoth);
    EXPECT_EQ(c.kind, BoundaryKind::AccessibleUpper);
    // Σ_{0<k<N} 2kh · h = h² N (N - 1).
    EXPECT_NEAR(c.integral_value, 0.999, 1e-13);
    EXPECT_THROW(classify_boundary(*models().drift20, BoundaryMode::InaccessibleUpper), InvalidArgument);
}

TEST(Classify, DriftIsNonEntrance) {
    auto c = classify_boundary(*models().drift20, *models().drift40);
    EXPECT_EQ(c.kind, BoundaryKind::NonEntrance);
    EXPECT_GT(c.growth, 1.5);
    // ∫_0^L (1 - e^{-2u}) du.
    EXPECT_NEAR(c.integral_short, 20.0 - 0.5 * (1.0 - std::exp(-40.0)), 0.05);
    EXPECT_THROW(classify_boundary(*models().drift40, *models().drift20), InvalidArgument);
}

TEST(Classify, CubicIsEntrance) {
    auto c = classify_boundary(*models().cubic6, *models().cubic12);
    EXPECT_EQ(c.kind, BoundaryKind::Entrance);
    EXPECT_LT(c.sensitivity, 0.01);
}

// ∫ s(u) m(du) grows like log L for the Ornstein–Uhlenbeck process.
TEST(Classify, SlowGrowthIsInconclusive) {
    auto a = diffusion([](double x) { return -x; }, 6.0, 600, DiffusionGauge::ScaleDerivative);
    auto b = diffusion([](double x) { return -x; }, 12.0, 1200, DiffusionGauge::ScaleDerivative);
    EXPECT_THROW(classify_boundary(*a, *b), InconclusiveClassification);
}

TEST(Decay, KappaOfBrownianInterval) {
    auto d = decay_parameter(*models().unit, BoundaryMode::AccessibleBoth, BoundaryKind::AccessibleUpper);
    EXPECT_NEAR(d.value / (0.5 * kPi2), 1.0, 1e-5);
    EXPECT_TRUE(d.scan_consistent);
    EXPECT_FALSE(d.caveat);
}

TEST(Decay, IotaOfReflectedBrownianMotion) {
    auto fam = bm(1.0, 1000, 0.0, BoundaryMode::AccessibleKillAtZeroOnly);
    auto d = decay_parameter(*fam, BoundaryMode::AccessibleKillAtZeroOnly, BoundaryKind::AccessibleUpper);
    EXPECT_NEAR(d.value / (kPi2 / 8.0), 1.0, 5e-3);
    EXPECT_LT(d.value, 0.5 * kPi2);
}

TEST(Decay, DriftLambdaNonEntrance) {
    auto d = decay_parameter(*models().drift40, BoundaryMode::InaccessibleUpper, BoundaryKind::NonEntrance);
    EXPECT_TRUE(d.caveat);
    EXPECT_FALSE(d.no_qsd);
    EXPECT_NEAR(d.value, 0.5, 1e-3);
    EXPECT_FALSE(d.prefixes.empty());
}

TEST(Decay, DriftlessHalflineHasNoQsd) {
    auto a = bm(20.0, 1000, 0.0, BoundaryMode::InaccessibleUpper);
    auto b = bm(40.0, 2000, 0.0, BoundaryMode::InaccessibleUpper);
    auto rep = build_qsd_report(*a, BoundaryMode::InaccessibleUpper, b.get());
    EXPECT_EQ(rep.boundary.kind, BoundaryKind::NonEntrance);
    EXPECT_TRUE(rep.decay.no_qsd);
    EXPECT_FALSE(rep.has_qsd);
    EXPECT_EQ(rep.status, "no QSD (λ₀=0)");
}

TEST(Decay, CubicEntranceRoot) {
    auto d = decay_parameter(*models().cubic12, BoundaryMode::InaccessibleUpper, BoundaryKind::Entrance);
    EXPECT_GT(d.value, 0.9);
    EXPECT_LT(d.value, 1.05);
    EXPECT_TRUE(d.scan_consistent);
    auto d6 = decay_parameter(*models().cubic6, BoundaryMode::InaccessibleUpper, BoundaryKind::Entrance);
    EXPECT_NEAR(d6.value, d.value, 1e-6);
}

TEST(Decay, LadderCapRaises) {
    LadderOptions opt;
    opt.max = 1.0;
    EXPECT_THROW(decay_parameter(*models().unit, BoundaryMode::AccessibleBoth, BoundaryKind::AccessibleUpper, opt),
                 NoRootInRange);
    opt.ratio = 1.0;
    EXPECT_THROW(first_root([](double l) { return 1.0 - l; }, opt), InvalidArgument);
}

TEST(Decay, FirstRootBisection) {
    LadderOptions opt;
    const double r = first_root([](double l) { return std::cos(l); }, opt);
    EXPECT_NEAR(r, 0.5 * oracle::pi, 1e-7);
}

TEST(LocalizedDecay, BrownianSubintervals) {
    const auto& fam = *models().unit;
    EXPECT_NEAR(localized_decay(fam, 0, 1000) / (0.5 * kPi2), 1.0, 1e-5);
    const double sub = localized_decay(fam, 200, 1000);
    EXPECT_NEAR(sub / (0.5 * kPi2 / 0.64), 1.0, 1e-5);
    EXPECT_GT(sub, localized_decay(fam, 0, 1000));
    EXPECT_THROW(localized_decay(fam, 500, 500), InvalidArgument);
    LadderOptions opt;
    opt.max = 10.0;
    EXPECT_THROW(localized_decay(fam, 0, 100, opt), NoRootInRange);
}

TEST(QsdDensity, BrownianIntervalSine) {
    const auto& fam = *models().unit;
    auto d = decay_parameter(fam, BoundaryMode::AccessibleBoth, BoundaryKind::AccessibleUpper);
    auto q = qsd_density(fam, d.value, BoundaryMode::AccessibleBoth);
    EXPECT_NEAR(q.normalization, 1.0, 1e-12);
    double l1 = 0.0;
    for (std::size_t i = 1; i < 1000; ++i) {
        const double x = fam.nodes()[i];
        l1 += std::abs(q.density[i] - 0.5 * oracle::pi * std::sin(oracle::pi * x)) * fam.measure()[i];
    }
    EXPECT_LT(l1, 1e-3);
    EXPECT_THROW(qsd_density(fam, 6.0, BoundaryMode::AccessibleBoth), NegativeDensity);
    EXPECT_THROW(qsd_density(fam, 0.0, BoundaryMode::AccessibleBoth), InvalidArgument);
}

TEST(QsdDensity, DriftFamily) {
    const auto& fam = *models().drift40;
    auto q = qsd_density(fam, 0.5, BoundaryMode::InaccessibleUpper);
    double l1 = 0.0;
    for (std::size_t i = 1; i < fam.size() - 1; ++i) {
        const double x = fam.nodes()[i];
        l1 += std::abs(q.density[i] - x * std::exp(-x)) * fam.measure()[i];
    }
    EXPECT_LT(l1, 1e-2);
    for (double lambda : {0.1, 0.3, 0.5}) {
        auto ql = qsd_density(fam, lambda, BoundaryMode::InaccessibleUpper);
        EXPECT_NEAR(ql.normalization, 1.0, 1e-3) << lambda;
        EXPECT_NEAR(h_func(fam, 0.0, lambda, 0), 1.0 - ql.normalization, 1e-3);
    }
    EXPECT_THROW(qsd_density(fam, 0.8, BoundaryMode::InaccessibleUpper), NegativeDensity);
}

TEST(QsdDensity, EntranceMassBelowOneUnderThreshold) {
    const auto& fam = *models().cubic12;
    auto d = decay_parameter(fam, BoundaryMode::InaccessibleUpper, BoundaryKind::Entrance);
    auto at = qsd_density(fam, d.value, BoundaryMode::InaccessibleUpper);
    EXPECT_NEAR(at.normalization, 1.0, 1e-2);
    auto below = qsd_density(fam, 0.5 * d.value, BoundaryMode::InaccessibleUpper);
    EXPECT_LT(below.normalization, 0.99);
    EXPECT_NEAR(h_func(fam, 0.0, 0.5 * d.value, 0), 1.0 - below.normalization, 1e-6);
    // h^(q) is non-increasing in q.
    EXPECT_LT(h_func(fam, 1.0, 0.5 * d.value, 0), h_func(fam, 0.0, 0.5 * d.value, 0));
}

TEST(HFunction, ZeroForNonEntranceAndPositiveForEntrance) {
    const auto& drift = *models().drift40;
    for (double lambda : {0.1, 0.25, 0.4}) {
        EXPECT_LT(std::abs(h_func(drift, 1.0, lambda, 0)), 1e-3);
        EXPECT_LT(std::abs(h_func(drift, 0.0, lambda, 0)), 1e-3);
    }
    const auto& cub = *models().cubic12;
    const double h = h_func(cub, 1.0, 0.45, 0);
    EXPECT_GT(h, 0.01);
    EXPECT_LT(h, 1.0);
    EXPECT_THROW(h_func(cub, -0.5, 0.45, 0), InvalidArgument);
    EXPECT_THROW(h_func(cub, 1.0, 0.45, cub.size() - 1), InvalidArgument);
}

// ρ' = ∫_0^1 W̃(u) W̃(1-u) du at q = -π²/2, i.e. (4/π²) ∫ sin² = 2/π².
TEST(Rho, BrownianIntervalDerivative) {
    const auto& fam = *models().unit;
    auto d = decay_parameter(fam, BoundaryMode::AccessibleBoth, BoundaryKind::AccessibleUpper);
    auto r = rho(fam, d.value, BoundaryMode::AccessibleBoth);
    const double q = -0.5 * kPi2;
    const double brute = oracle::simpson([&](double u) { return oracle::bm_w(q, u) * oracle::bm_w(q, 1.0 - u); }, 0.0, 1.0);
    EXPECT_NEAR(brute, 2.0 / kPi2, 1e-12);
    EXPECT_NEAR(r.value, brute, 1e-4);
    EXPECT_NEAR(r.fd_value, r.value, 1e-4);
    EXPECT_TRUE(r.simple_root);
}

TEST(Yaglom, BrownianIntervalConstants) {
    const auto& fam = *models().unit;
    auto d = decay_parameter(fam, BoundaryMode::AccessibleBoth, BoundaryKind::AccessibleUpper);
    auto q = qsd_density(fam, d.value, BoundaryMode::AccessibleBoth);
    auto r = rho(fam, d.value, BoundaryMode::AccessibleBoth);
    auto y = yaglom_constants(fam, BoundaryMode::AccessibleBoth, q, r);
    EXPECT_NEAR(y.pi_mass, 1.0, 1e-3);
    // Q-process law 2 sin²(πx); survival profile (4/π) sin(πx) for P_x[τ > t] ~ (4/π) sin(πx) e^{-κ0 t}.
    for (std::size_t i : {100u, 500u, 800u}) {
        const double x = fam.nodes()[i];
        EXPECT_NEAR(y.pi[i], 2.0 * std::pow(std::sin(oracle::pi * x), 2), 2e-3);
        EXPECT_NEAR(y.profile[i], 4.0 / oracle::pi * std::sin(oracle::pi * x), 2e-3);
    }
}

TEST(Yaglom, EntranceProfileIncreasing) {
    auto rep = build_qsd_report(*models().cubic6, BoundaryMode::InaccessibleUpper, models().cubic12.get());
    ASSERT_TRUE(rep.has_qsd);
    EXPECT_EQ(rep.status, "unique QSD");
    ASSERT_TRUE(rep.yaglom && rep.rho && rep.h_half);
    EXPECT_TRUE(rep.yaglom->profile_increasing);
    EXPECT_NEAR(rep.yaglom->pi_mass, 1.0, 1e-2);
    EXPECT_GT(rep.rho->value, 0.0);
    EXPECT_NEAR(rep.rho->fd_value / rep.rho->value, 1.0, 1e-3);
    EXPECT_GT(*rep.h_half, 0.01);
    EXPECT_LT(*rep.h_half, 1.0);
}

TEST(LrOrder, DriftFamilyOrdered) {
    const auto& fam = *models().drift40;
    auto ok = lr_order_check(fam, 0.5, 0.25);
    EXPECT_TRUE(ok.pass);
    EXPECT_GT(ok.nodes_checked, 100u);
    EXPECT_TRUE(lr_order_check(fam, 0.3, 0.3).pass);
    EXPECT_FALSE(lr_order_check(fam, 0.25, 0.5).pass);
}

TEST(Report, DriftFamilyStatus) {
    auto rep = build_qsd_report(*models().drift20, BoundaryMode::InaccessibleUpper, models().drift40.get());
    EXPECT_EQ(rep.boundary.kind, BoundaryKind::NonEntrance);
    EXPECT_TRUE(rep.has_qsd);
    EXPECT_EQ(rep.status, "QSD family ν_λ for λ in (0, λ0]");
    EXPECT_FALSE(rep.rho.has_value());
    EXPECT_THROW(build_qsd_report(*models().drift20, BoundaryMode::InaccessibleUpper, nullptr), InvalidArgument);
}

TEST(Bounds, PowerAndZBoundsOnQsdModels) {
    EXPECT_EQ(power_bound_check(*models().drift20, 8).violations, 0u);
    EXPECT_EQ(power_bound_check(*models().cubic6, 8).violations, 0u);
    for (double q : {-1.0, 0.5, 2.0}) EXPECT_EQ(z_bound_check(*models().cubic6, q).violations, 0u);
}
