#pragma once

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "kfp/errors.hpp"

namespace kfp {

/// Largest ambient dimension handled (N <= 6 in space, +1 for time).
inline constexpr int kMaxDim = 7;

// Fixed-capacity dynamic types: no heap traffic in the quadrature loops.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// e^{sA}. Scaling-and-squaring with a degree-13 Pade approximant (Eigen).
inline Mat mat_exp(const Mat& a, double s = 1.0) {
    if (!a.allFinite() || !std::isfinite(s))
        throw InvalidInput("mat_exp: non-finite input");
    if (a.rows() != a.cols())
        throw InvalidInput("mat_exp: matrix is not square");
    if (s == 0.0)
        return Mat::Identity(a.rows(), a.cols());
    // Scale to norm <= 1 ourselves and square back: Eigen's own scaling loses
    // the nilpotent structure of B at very large s (e.g. t = 1e9).
    const double norm = std::abs(s) * a.cwiseAbs().rowwise().sum().maxCoeff();
    const int k = norm > 1.0 ? static_cast<int>(std::ceil(std::log2(norm))) : 0;
    const Eigen::MatrixXd scaled = std::ldexp(s, -k) * Eigen::MatrixXd(a);
    Eigen::MatrixXd e = scaled.exp();
    for (int i = 0; i < k; ++i)
        e = (e * e).eval();
    return Mat(e);
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Degeneracy is judged on the Jacobi-equilibrated matrix D^{-1/2} M D^{-1/2}:
/// it is rejected when its smallest eigenvalue is <= 1e-12 times its largest.
/// This is invariant under positive diagonal rescaling, so the strongly
/// anisotropic covariances of degenerate Kolmogorov pairs at small times
/// are accepted while genuinely singular matrices are not.
class SpdFactor {
public:
    static constexpr double kTolerance = 1e-12;

    explicit SpdFactor(const Mat& m) {
        const auto n = m.rows();
        if (n != m.cols() || n == 0)
            throw InvalidInput("spd_factorize: matrix must be square and non-empty");
        if (!m.allFinite())
            throw InvalidInput("spd_factorize: non-finite entries");
        const double scale = m.cwiseAbs().maxCoeff();
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > kTolerance * std::max(scale, 1e-300))
            throw InvalidInput("spd_factorize: matrix is not symmetric");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(m(i, i) > 0.0))
                throw FactorizationError(static_cast<int>(i), "spd_factorize: non-positive diagonal");

        Vec d = m.diagonal().cwiseSqrt().cwiseInverse();
        Mat corr = d.asDiagonal() * m * d.asDiagonal();
        corr = symmetrize(corr);
        Eigen::SelfAdjointEigenSolver<Mat> eig(corr, Eigen::EigenvaluesOnly);
        min_ratio_ = eig.eigenvalues()(0) / eig.eigenvalues()(n - 1);
        Eigen::LLT<Mat> llt(corr);
        if (llt.info() != Eigen::Success || !(min_ratio_ > kTolerance)) {
            int pivot = 0;
            Mat lower = Mat::Zero(n, n);
            // Locate the first failing pivot for the error report.
            for (Eigen::Index j = 0; j < n; ++j) {
                double diag = corr(j, j) - lower.row(j).head(j).squaredNorm();
                if (!(diag > kTolerance)) {
                    pivot = static_cast<int>(j);
                    break;
                }
                lower(j, j) = std::sqrt(diag);
                for (Eigen::Index i = j + 1; i < n; ++i)
                    lower(i, j) = (corr(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j))) / lower(j, j);
                pivot = static_cast<int>(j);
            }
            throw FactorizationError(pivot, "spd_factorize: matrix is not positive definite");
        }
        lower_ = d.cwiseInverse().asDiagonal() * Mat(llt.matrixL());
        logdet_ = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            logdet_ += 2.0 * std::log(lower_(i, i));
    }

    const Mat& lower() const noexcept { return lower_; }
    double logdet() const noexcept { return logdet_; }
    /// Smallest/largest eigenvalue of the equilibrated matrix.
    double conditioning() const noexcept { return min_ratio_; }
    Eigen::Index size() const noexcept { return lower_.rows(); }

    /// Solves M x = b.
    Vec solve(const Vec& b) const {
        Vec y = lower_.triangularView<Eigen::Lower>().solve(b);
        return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
    }

    /// bᵀ M^{-1} b.
    double inverse_quadratic(const Vec& b) const {
        Vec y = lower_.triangularView<Eigen::Lower>().solve(b);
        return y.squaredNorm();
    }

private:
    Mat lower_;
    double logdet_ = 0.0;
    double min_ratio_ = 0.0;
};

inline SpdFactor spd_factorize(const Mat& m) { return SpdFactor(m); }

/// Symmetric square root of a positive semidefinite matrix.
inline Mat psd_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(m));
    Vec ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
inline Mat psd_pinv(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(m));
    const Vec& ev = eig.eigenvalues();
    const double cut = 1e-13 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    Vec inv(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        inv(i) = ev(i) > cut ? 1.0 / ev(i) : 0.0;
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

inline double min_eigenvalue(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    return eig.eigenvalues()(0);
}

inline double max_eigenvalue(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    return eig.eigenvalues()(m.rows() - 1);
}

} // namespace kfp
