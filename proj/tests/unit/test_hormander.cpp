#include <cmath>

#include <gtest/gtest.h>

#include "kfp/hormander.hpp"

using namespace kfp;

namespace {

// Adaptive Simpson on a scalar function; used as an independent oracle.
template <class F>
double simpson(F&& f, double a, double b, double tol, int depth = 40) {
    const double c = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fc = f(c);
    const double whole = (b - a) / 6.0 * (fa + 4 * fc + fb);
    auto rec = [&](auto&& self, double a, double b, double fa, double fb, double fc, double whole, double tol,
                   int depth) -> double {
        const double c = 0.5 * (a + b);
        const double d = 0.5 * (a + c), e = 0.5 * (c + b);
        const double fd = f(d), fe = f(e);
        const double left = (c - a) / 6.0 * (fa + 4 * fd + fc);
        const double right = (b - c) / 6.0 * (fc + 4 * fe + fb);
        if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
            return left + right + (left + right - whole) / 15.0;
        return self(self, a, c, fa, fc, fd, left, tol / 2, depth - 1) +
               self(self, c, b, fc, fb, fe, right, tol / 2, depth - 1);
    };
    return rec(rec, a, b, fa, fb, fc, whole, tol, depth);
}

} // namespace

TEST(CovarianceK, KolmogorovClosedForm) {
    const auto pair = HormanderPair::kolmogorov();
    for (double t : {1e-8, 1e-3, 0.5, 1.0, 7.0, 1e4, 1e9}) {
        const auto c = covariance_K(pair, t);
        EXPECT_NEAR(c.K_t(0, 0), 1.0, 1e-12);
        EXPECT_NEAR(c.K_t(0, 1) / (t / 2), 1.0, 1e-12) << t;
        EXPECT_NEAR(c.K_t(1, 1) / (t * t / 3), 1.0, 1e-12) << t;
        EXPECT_NEAR(c.logdet, std::log(std::pow(t, 4) / 12.0), 1e-9) << t;
    }
    EXPECT_NEAR(covariance_K(pair, 1.0).logdet, std::log(1.0 / 12.0), 1e-13);
}

TEST(CovarianceK, HeatIsIdentity) {
    const auto pair = HormanderPair::heat(3);
    const auto c = covariance_K(pair, 2.5);
    EXPECT_LT((c.K_t - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(c.logdet, 3 * std::log(2.5), 1e-13);
}

TEST(CovarianceK, DampedPairAgainstScalarQuadrature) {
    // e^{sB} Q e^{sB^T} = v v^T with v = (e^{-s}, 1 - e^{-s}).
    const auto pair = HormanderPair::damped_kolmogorov();
    EXPECT_DOUBLE_EQ(pair.trace_B(), -1.0);
    for (double t : {0.01, 1.0, 30.0}) {
        const double k00 = simpson([](double s) { return std::exp(-2 * s); }, 0, t, 1e-14) / t;
        const double k01 = simpson([](double s) { return std::exp(-s) * -std::expm1(-s); }, 0, t, 1e-14) / t;
        const double k11 = simpson([](double s) { return std::pow(-std::expm1(-s), 2); }, 0, t, 1e-14) / t;
        const auto c = covariance_K(pair, t);
        EXPECT_NEAR(c.K_t(0, 0) / k00, 1.0, 1e-9) << t;
        EXPECT_NEAR(c.K_t(0, 1) / k01, 1.0, 1e-9) << t;
        EXPECT_NEAR(c.K_t(1, 1) / k11, 1.0, 1e-9) << t;
    }
}

TEST(CheckHormander, PassesOnPresetsFailsOnDegeneratePair) {
    const std::vector<double> grid{1e-4, 1e-2, 1.0, 100.0};
    EXPECT_TRUE(check_hormander(HormanderPair::kolmogorov(), grid).pass);
    EXPECT_TRUE(check_hormander(HormanderPair::heat(2), grid).pass);
    EXPECT_TRUE(check_hormander(HormanderPair::damped_kolmogorov(), grid).pass);

    Mat q = Mat::Zero(2, 2);
    q(0, 0) = 1.0;
    const HormanderPair bad(q, Mat::Zero(2, 2));
    const auto rep = check_hormander(bad, grid);
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(rep.min_eigenvalues.size(), grid.size());
    EXPECT_THROW(covariance_K(bad, 1.0), HypoellipticityViolation);
}

TEST(HormanderPair, ValidatesInputs) {
    Mat q = Mat::Identity(2, 2);
    q(0, 1) = 0.3;
    EXPECT_THROW(HormanderPair(q, Mat::Zero(2, 2)), InvalidInput);  // not symmetric
    Mat neg = -Mat::Identity(2, 2);
    EXPECT_THROW(HormanderPair(neg, Mat::Zero(2, 2)), InvalidInput);  // not PSD
    EXPECT_THROW(HormanderPair(Mat::Identity(2, 2), Mat::Zero(3, 3)), InvalidInput);
    EXPECT_THROW(HormanderPair::heat(0), InvalidInput);
    EXPECT_THROW(covariance_K(HormanderPair::heat(1), -1.0), InvalidInput);
}
