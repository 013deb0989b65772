#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "kfp/errors.hpp"

namespace kfp {

/// Deterministic description of every integration engine.
struct QuadratureSpec {
    int hermite_order = 40;       ///< Gauss-Hermite points per axis.
    int mc_samples = 20000;       ///< Monte Carlo draws (each used with its antithetic twin).
    std::uint64_t mc_seed = 0x5eed5eedULL;
    int tau_panels = 30;          ///< geometric panels on [tau_floor, 1]
    int tau_panel_order = 16;     ///< Gauss-Legendre order per near-field panel
    int tail_panels = 40;         ///< geometric panels on [1, tau_cap]
    int tail_order = 16;          ///< Gauss-Legendre order per tail panel
    double tau_floor = 0x1p-30;
    double tau_cap = 0x1p40;
    int covariance_order = 32;    ///< Gauss-Legendre order for K(t)
    int radial_panels = 16;       ///< geometric radial panels on [2^-radial_panels, 1]
    int radial_order = 16;
    int angular_order = 32;       ///< base angular resolution for n = 2, 3

    void validate() const {
        if (hermite_order < 2 || tau_panel_order < 2 || tail_order < 2 || covariance_order < 2 ||
            radial_order < 2 || angular_order < 2)
            throw InvalidInput("quadrature: all orders must be >= 2");
        if (tau_panels < 1 || tail_panels < 1 || radial_panels < 1)
            throw InvalidInput("quadrature: panel counts must be >= 1");
        if (!(tau_floor > 0.0 && tau_floor < 1.0) || !(tau_cap > 1.0) || !std::isfinite(tau_cap))
            throw InvalidInput("quadrature: need 0 < tau_floor < 1 < tau_cap < inf");
        if (mc_samples < 1)
            throw InvalidInput("quadrature: mc_samples must be positive");
    }
};

/// One-dimensional rule: nodes and weights.
struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const noexcept { return nodes.size(); }
};

/// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline Rule gauss_legendre(int n) {
    if (n < 1)
        throw InvalidInput("gauss_legendre: order must be positive");
    Rule r;
    r.nodes.assign(n, 0.0);
    r.weights.assign(n, 2.0);
    if (n == 1)
        return r;
    // P_n(x) and P_n'(x) by the three-term recurrence.
    auto legendre = [n](double x, double& dp) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        return p1;
    };
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            const double dx = legendre(x, dp) / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16)
                break;
        }
        legendre(x, dp);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1)
        r.nodes[n / 2] = 0.0;
    return r;
}

/// Gauss-Legendre rule mapped to [a, b].
inline Rule gauss_legendre(int n, double a, double b) {
    Rule r = gauss_legendre(n);
    const double half = 0.5 * (b - a), mid = 0.5 * (b + a);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r.nodes[i] = mid + half * r.nodes[i];
        r.weights[i] *= half;
    }
    return r;
}

/// Gauss-Hermite rule for the standard normal weight (weights sum to 1),
/// by Golub-Welsch on the probabilists' Hermite recurrence.
inline Rule gauss_hermite(int n) {
    if (n < 1)
        throw InvalidInput("gauss_hermite: order must be positive");
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jac(k, k - 1) = std::sqrt(static_cast<double>(k));
        jac(k - 1, k) = jac(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        r.nodes[i] = eig.eigenvalues()(i);
        const double v = eig.eigenvectors()(0, i);
        r.weights[i] = v * v;
    }
    // Symmetrize against roundoff in the eigensolver.
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
        const double w = 0.5 * (r.weights[n - 1 - i] + r.weights[i]);
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1)
        r.nodes[n / 2] = 0.0;
    double total = 0.0;
    for (double w : r.weights)
        total += w;
    for (double& w : r.weights)
        w /= total;
    return r;
}

/// Nodes and weights for integrals over tau in [floor, cap], built from
/// geometric panels in log(tau). The split point tau = 1 is always a panel
/// boundary: near field (floor, 1] and tail [1, cap].
struct TauMesh {
    double floor = 0.0;
    double cap = 0.0;
    std::vector<double> tau;
    std::vector<double> weight;

    std::size_t size() const noexcept { return tau.size(); }

    static TauMesh build(const QuadratureSpec& q) {
        q.validate();
        TauMesh mesh;
        mesh.floor = q.tau_floor;
        mesh.cap = q.tau_cap;
        auto add_panels = [&](double log_lo, double log_hi, int panels, int order) {
            const Rule base = gauss_legendre(order);
            const double h = (log_hi - log_lo) / panels;
            for (int p = 0; p < panels; ++p) {
                const double a = log_lo + p * h;
                for (std::size_t i = 0; i < base.size(); ++i) {
                    const double l = a + 0.5 * h * (base.nodes[i] + 1.0);
                    const double t = std::exp(l);
                    mesh.tau.push_back(t);
                    mesh.weight.push_back(0.5 * h * base.weights[i] * t);
                }
            }
        };
        add_panels(std::log(q.tau_floor), 0.0, q.tau_panels, q.tau_panel_order);
        add_panels(0.0, std::log(q.tau_cap), q.tail_panels, q.tail_order);
        return mesh;
    }
};

/// Odometer over a tensor grid of `dim` axes with `order` points each.
/// Calls f(index_array) for each grid point; index_array has `dim` entries.
template <class F>
void for_each_tensor_index(int dim, int order, F&& f) {
    int idx[16] = {0};
    if (dim > 16)
        throw Unsupported("tensor grid dimension too large");
    for (;;) {
        f(static_cast<const int*>(idx));
        int k = 0;
        while (k < dim) {
            if (++idx[k] < order)
                break;
            idx[k] = 0;
            ++k;
        }
        if (k == dim)
            break;
    }
}

} // namespace kfp
