#include <cmath>

#include <gtest/gtest.h>

#include "kfp/verify.hpp"

using namespace kfp;

namespace {

Vec vec(std::initializer_list<double> xs) {
    Vec v(static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs)
        v(i++) = x;
    return v;
}

TestFunction tilted_gaussian() {
    Mat A(3, 3);
    A << 1.0, 0.2, 0.1, 0.2, 0.8, 0.0, 0.1, 0.0, 0.5;
    return TestFunction::gaussian(1.0, vec({0.1, -0.2, 0.05}), A);
}

const SemigroupContext& kolmogorov_ctx() {
    static const SemigroupContext ctx = SemigroupContext::on_tau_mesh(HormanderPair::kolmogorov(), {});
    return ctx;
}

} // namespace

TEST(Points, DefaultsAreDistinctAndSized) {
    const auto pts = default_points(2);
    ASSERT_EQ(pts.size(), 5u);
    EXPECT_EQ(pts[0].X.norm(), 0.0);
    EXPECT_EQ(pts[3].t, 0.5);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            EXPECT_GT((pts[i].joined() - pts[j].joined()).norm(), 0.0);
}

TEST(Extrapolation, ExactForQuadratics) {
    const std::vector<double> eps{0.1, 0.05, 0.01};
    std::vector<double> y;
    for (double e : eps)
        y.push_back(2.0 - 3.0 * e + 5.0 * e * e);
    EXPECT_NEAR(detail::extrapolate_to_zero(eps, y), 2.0, 1e-12);
}

TEST(Digest, SensitiveToEveryInput) {
    const HormanderPair k = HormanderPair::kolmogorov();
    const TestFunction u = tilted_gaussian();
    const QuadratureSpec q;
    const auto base = config_digest("square_rule", k, u, "", 0.5, q);
    EXPECT_EQ(base, config_digest("square_rule", k, u, "", 0.5, q));
    EXPECT_NE(base, config_digest("convexity", k, u, "", 0.5, q));
    EXPECT_NE(base, config_digest("square_rule", HormanderPair::damped_kolmogorov(), u, "", 0.5, q));
    EXPECT_NE(base, config_digest("square_rule", k, 2.0 * u, "", 0.5, q));
    EXPECT_NE(base, config_digest("square_rule", k, u, "", 0.25, q));
    QuadratureSpec q2;
    q2.hermite_order = 41;
    EXPECT_NE(base, config_digest("square_rule", k, u, "", 0.5, q2));
}

TEST(SquareRule, HoldsOnKolmogorov) {
    const auto rep = check_square_rule(kolmogorov_ctx(), tilted_gaussian(), default_points(2), 0.5, Engine::exact);
    EXPECT_TRUE(rep.pass()) << rep.max_residual();
    EXPECT_EQ(rep.rows.size(), 5u);
}

TEST(SquareRule, DetectsAWrongCarre) {
    // Feeding u^2 against the identity for a different function must fail somewhere.
    const auto& ctx = kolmogorov_ctx();
    const TestFunction u = tilted_gaussian();
    const SpaceTimePoint p = default_points(2)[1];
    const double lhs = frac_K(ctx, u * u, p, 0.5).value;
    const double wrong = 2.0 * u(p.joined()) * frac_K(ctx, u, p, 0.5).value;  // carre omitted
    EXPECT_GT(std::abs(lhs - wrong), 1e-3);
}

TEST(Convexity, HoldsForConvexPhis) {
    const auto& ctx = kolmogorov_ctx();
    const TestFunction u = tilted_gaussian();
    for (const PhiFunction& phi :
         {PhiFunction::quadratic(1.0, 0.0, 0.0), PhiFunction::softabs(0.1), PhiFunction::exponential().on(-1.0, 2.0)}) {
        const auto rep = check_convexity_inequality(ctx, u, phi, default_points(2, 3), 0.5);
        EXPECT_TRUE(rep.pass()) << phi.name();
    }
    EXPECT_THROW(check_convexity_inequality(ctx, u, PhiFunction::quadratic(-1, 0, 0), default_points(2, 1), 0.5),
                 InvalidInput);
}

TEST(Convexity, ConcavePhiViolatesInequality) {
    // For -t^2 the inequality reverses wherever the carre is positive.
    const auto& ctx = kolmogorov_ctx();
    const TestFunction u = tilted_gaussian();
    const PhiFunction concave = PhiFunction::quadratic(-1.0, 0.0, 0.0);
    const SpaceTimePoint p = default_points(2)[1];
    const double lhs = frac_K(ctx, u, p, 0.5, Engine::exact, Outer::of(concave)).value;
    const double rhs = concave.d1(u(p.joined())) * frac_K(ctx, u, p, 0.5).value;
    EXPECT_GT(lhs, rhs);
}

TEST(TindReduction, HeatMatchesDirect) {
    const TestFunction v = TestFunction::isotropic(1.0, vec({0.0}), 1.0);
    const auto rep = check_tind_reduction(v, default_points(1), 0.5);
    EXPECT_TRUE(rep.pass()) << rep.max_residual();
}

TEST(SLimits, PassForCubic) {
    const TestFunction u = TestFunction::isotropic(1.0, vec({0.0, 0.0, 0.0}), 1.0);
    const auto rep = check_s_limits(kolmogorov_ctx(), u, PhiFunction::power(3), default_points(2, 2));
    for (const auto& r : rep.rows)
        EXPECT_TRUE(r.passed()) << r.label << " " << r.point_index << " " << r.residual << " > " << r.tolerance;
    EXPECT_THROW(check_s_limits(kolmogorov_ctx(), u, PhiFunction::power(3), default_points(2, 1), {0.9, 0.95}),
                 InvalidInput);
}

TEST(GeneralChainRule, HermiteAgreesWithMonteCarlo) {
    QuadratureSpec q;
    q.mc_samples = 5000;
    q.tau_panels = 16;
    q.tail_panels = 24;
    q.tau_panel_order = 8;
    q.tail_order = 8;
    const auto ctx = SemigroupContext::on_tau_mesh(HormanderPair::damped_kolmogorov(), q);
    const TestFunction u = TestFunction::isotropic(0.8, vec({0.2, 0.0, 0.1}), 0.9);
    const auto rep = check_general_chain_rule(ctx, u, PhiFunction::power(3), default_points(2, 2), 0.5);
    EXPECT_TRUE(rep.pass()) << rep.max_residual();
    for (const auto& r : rep.rows)
        EXPECT_GT(r.std_error, 0.0);
}
