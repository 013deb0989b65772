#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "kfp/errors.hpp"
#include "kfp/linalg.hpp"
#include "kfp/quadrature.hpp"

namespace kfp {

/// The constant matrices (Q, B) of K = tr(Q D^2) + <BX, D> - d/dt on R^{N+1}.
class HormanderPair {
public:
    static constexpr double kSymmetryTolerance = 1e-12;

    HormanderPair(Mat q, Mat b) : q_(std::move(q)), b_(std::move(b)) {
        const auto n = q_.rows();
        if (n < 1 || n > kMaxDim - 1)
            throw InvalidInput("HormanderPair: N must be in [1, " + std::to_string(kMaxDim - 1) + "]");
        if (q_.cols() != n || b_.rows() != n || b_.cols() != n)
            throw InvalidInput("HormanderPair: Q and B must both be N x N");
        if (!q_.allFinite() || !b_.allFinite())
            throw InvalidInput("HormanderPair: non-finite entries");
        const double scale = std::max(q_.cwiseAbs().maxCoeff(), 1.0);
        if ((q_ - q_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale)
            throw InvalidInput("HormanderPair: Q is not symmetric");
        q_ = symmetrize(q_);
        if (min_eigenvalue(q_) < -kSymmetryTolerance * scale)
            throw InvalidInput("HormanderPair: Q is not positive semidefinite");
    }

    int dim() const noexcept { return static_cast<int>(q_.rows()); }
    const Mat& Q() const noexcept { return q_; }
    const Mat& B() const noexcept { return b_; }
    double trace_B() const { return b_.trace(); }

    /// Q = I_N, B = 0: the heat operator.
    static HormanderPair heat(int n) {
        return HormanderPair(Mat::Identity(n, n), Mat::Zero(n, n));
    }

    /// Q = diag(1, 0), B = [[0,0],[1,0]]: the degenerate Kolmogorov operator
    /// d_xx + x d_y - d_t.
    static HormanderPair kolmogorov() {
        Mat q = Mat::Zero(2, 2), b = Mat::Zero(2, 2);
        q(0, 0) = 1.0;
        b(1, 0) = 1.0;
        return HormanderPair(q, b);
    }

    /// Q = diag(1, 0), B = [[-1,0],[1,0]]: hypoelliptic with tr B = -1.
    static HormanderPair damped_kolmogorov() {
        Mat q = Mat::Zero(2, 2), b = Mat::Zero(2, 2);
        q(0, 0) = 1.0;
        b(0, 0) = -1.0;
        b(1, 0) = 1.0;
        return HormanderPair(q, b);
    }

private:
    Mat q_;
    Mat b_;
};

/// K(t) together with the factorization of t K(t) used by the kernel.
struct CovarianceMatrix {
    double t = 0.0;
    Mat K_t;        ///< K(t), symmetric
    Mat chol;       ///< lower factor of t K(t)
    double logdet = 0.0;  ///< log det(t K(t))
};

namespace detail {

/// int_0^h e^{rB} Q e^{rB^T} dr by Gauss-Legendre of the given order.
inline Mat integrate_covariance(const HormanderPair& pair, double h, int order) {
    const Rule rule = gauss_legendre(order, 0.0, h);
    const auto n = pair.dim();
    Mat acc = Mat::Zero(n, n);
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const Mat e = mat_exp(pair.B(), rule.nodes[i]);
        acc += rule.weights[i] * (e * pair.Q() * e.transpose());
    }
    return acc;
}

} // namespace detail

/// Unnormalized covariance C(t) = t K(t) = int_0^t e^{rB} Q e^{rB^T} dr.
///
/// The base interval h = t / 2^k is small enough that |h B| <= 1, so
/// Gauss-Legendre converges quickly there; the cross-check against twice the
/// order refines the base interval until both agree to 1e-10. Then
/// C(2h) = C(h) + e^{hB} C(h) e^{hB^T} doubles back up to t.
inline Mat covariance_integral(const HormanderPair& pair, double t, int order = 32) {
    if (!(t > 0.0) || !std::isfinite(t))
        throw InvalidInput("covariance_K: t must be positive and finite");
    const double bnorm = pair.B().cwiseAbs().rowwise().sum().maxCoeff();
    int k = 0;
    if (t * bnorm > 1.0)
        k = static_cast<int>(std::ceil(std::log2(t * bnorm)));
    Mat base;
    for (int attempt = 0;; ++attempt, ++k) {
        const double h = std::ldexp(t, -k);
        base = detail::integrate_covariance(pair, h, order);
        const Mat fine = detail::integrate_covariance(pair, h, 2 * order);
        const double scale = std::max(fine.cwiseAbs().maxCoeff(), 1e-300);
        if ((fine - base).cwiseAbs().maxCoeff() <= 1e-10 * scale)
            break;
        if (attempt >= 20)
            throw ConvergenceError("covariance_K: Gauss-Legendre cross-check failed");
    }
    Mat c = symmetrize(base);
    double h = std::ldexp(t, -k);
    for (int i = 0; i < k; ++i) {
        const Mat e = mat_exp(pair.B(), h);
        c = symmetrize(c + e * c * e.transpose());
        h *= 2.0;
    }
    return c;
}

inline CovarianceMatrix covariance_K(const HormanderPair& pair, double t, const QuadratureSpec& quad = {}) {
    const Mat c = covariance_integral(pair, t, quad.covariance_order);
    CovarianceMatrix out;
    out.t = t;
    out.K_t = c / t;
    try {
        const SpdFactor f(c);
        out.chol = f.lower();
        out.logdet = f.logdet();
    } catch (const Error&) {
        throw HypoellipticityViolation(t, min_eigenvalue(out.K_t));
    }
    return out;
}

struct HormanderReport {
    std::vector<double> times;
    std::vector<double> min_eigenvalues;
    std::vector<double> max_eigenvalues;
    bool pass = false;
};

/// Minimum eigenvalue of K(t) on a probe grid; passes iff every minimum
/// exceeds 1e-12 times the corresponding maximum.
inline HormanderReport check_hormander(const HormanderPair& pair, const std::vector<double>& t_grid,
                                       const QuadratureSpec& quad = {}) {
    if (t_grid.empty())
        throw InvalidInput("check_hormander: empty time grid");
    HormanderReport r;
    r.pass = true;
    for (double t : t_grid) {
        if (!(t > 0.0))
            throw InvalidInput("check_hormander: times must be positive");
        const Mat k = covariance_integral(pair, t, quad.covariance_order) / t;
        const double lo = min_eigenvalue(k), hi = max_eigenvalue(k);
        r.times.push_back(t);
        r.min_eigenvalues.push_back(lo);
        r.max_eigenvalues.push_back(hi);
        if (!(lo > 1e-12 * hi))
            r.pass = false;
    }
    return r;
}

} // namespace kfp
