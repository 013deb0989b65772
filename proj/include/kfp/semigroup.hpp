#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kfp/errors.hpp"
#include "kfp/hormander.hpp"
#include "kfp/linalg.hpp"
#include "kfp/phi.hpp"
#include "kfp/quadrature.hpp"
#include "kfp/testfn.hpp"

namespace kfp {

enum class Engine { exact, hermite, monte_carlo };

inline std::string to_string(Engine e) {
    switch (e) {
    case Engine::exact: return "exact";
    case Engine::hermite: return "hermite";
    case Engine::monte_carlo: return "mc";
    }
    return "?";
}

inline Engine engine_from_string(const std::string& s) {
    if (s == "exact")
        return Engine::exact;
    if (s == "hermite")
        return Engine::hermite;
    if (s == "mc" || s == "monte_carlo")
        return Engine::monte_carlo;
    throw InvalidInput("unknown engine '" + s + "'");
}

/// A value with its Monte Carlo standard error (zero for deterministic engines).
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Gaussian law of Y under p(X, ., t): mean e^{tB}X, covariance 2t K(t).
struct KernelEval {
    double log_density = 0.0;
    Vec mean;
    Mat covariance;
};

/// Everything about p(., ., tau) that does not depend on X or Y.
struct KernelGeometry {
    double tau = 0.0;
    Mat flow;          ///< e^{tau B}
    Mat lower;         ///< lower factor of tau K(tau)
    double logdet_tK = 0.0;

    Vec mean(const Vec& X) const { return flow * X; }
    /// Lower factor of the Gaussian covariance 2 tau K(tau).
    Mat cov_lower() const { return std::numbers::sqrt2 * lower; }
};

inline KernelGeometry kernel_geometry(const HormanderPair& pair, double tau, const QuadratureSpec& quad = {}) {
    const CovarianceMatrix cov = covariance_K(pair, tau, quad);
    return KernelGeometry{tau, mat_exp(pair.B(), tau), cov.chol, cov.logdet};
}

inline double log_kernel(const KernelGeometry& g, const Vec& X, const Vec& Y) {
    const auto n = static_cast<double>(X.size());
    const Vec r = Y - g.mean(X);
    const Vec w = g.lower.triangularView<Eigen::Lower>().solve(r);
    return -0.5 * n * std::log(4.0 * std::numbers::pi) - 0.5 * g.logdet_tK - 0.25 * w.squaredNorm();
}

/// The fundamental solution p(X, Y, t), returned as a log-density.
inline KernelEval kernel(const HormanderPair& pair, const Vec& X, const Vec& Y, double t,
                         const QuadratureSpec& quad = {}) {
    if (X.size() != pair.dim() || Y.size() != pair.dim())
        throw InvalidInput("kernel: dimension mismatch");
    const KernelGeometry g = kernel_geometry(pair, t, quad);
    const Mat lc = g.cov_lower();
    return KernelEval{log_kernel(g, X, Y), g.mean(X), lc * lc.transpose()};
}

/// Tensor Gauss-Hermite grid for the standard normal law on R^dim.
struct HermiteGrid {
    int dim = 0;
    std::vector<double> z;  ///< dim entries per node
    std::vector<double> w;

    static constexpr int kMaxDimension = 4;

    static HermiteGrid build(int dim, int order) {
        if (dim > kMaxDimension)
            throw Unsupported("Hermite tensor grids are limited to N <= 4; use the Monte Carlo engine");
        const Rule r = gauss_hermite(order);
        HermiteGrid g;
        g.dim = dim;
        for_each_tensor_index(dim, order, [&](const int* idx) {
            double wt = 1.0;
            for (int i = 0; i < dim; ++i) {
                g.z.push_back(r.nodes[idx[i]]);
                wt *= r.weights[idx[i]];
            }
            g.w.push_back(wt);
        });
        return g;
    }

    std::size_t size() const noexcept { return w.size(); }
    Eigen::Map<const Eigen::VectorXd> node(std::size_t j) const {
        return Eigen::Map<const Eigen::VectorXd>(z.data() + j * dim, dim);
    }
};

namespace detail {

/// Gaussian envelope dominating the decaying part of f (every term must decay).
struct Envelope {
    Vec center;
    Mat A;
    Mat sqrtA;
};

inline std::optional<Envelope> envelope_of(const TestFunction& f) {
    if (f.terms().empty())
        return std::nullopt;
    const int n = f.dim();
    double total = 0.0;
    Vec center = Vec::Zero(n);
    for (const auto& g : f.terms()) {
        if (!(min_eigenvalue(g.A) > 0.0))
            return std::nullopt;
        const double a = std::abs(g.amplitude);
        total += a;
        center += a * g.center;
    }
    if (!(total > 0.0))
        return std::nullopt;
    center /= total;
    Mat cover = Mat::Zero(n, n);
    for (const auto& g : f.terms()) {
        const Vec d = g.center - center;
        cover += 0.5 * psd_pinv(g.A) + d * d.transpose();
    }
    Envelope e;
    e.center = center;
    e.A = symmetrize(0.25 * psd_pinv(cover));
    e.sqrtA = psd_sqrt(e.A);
    return e;
}

/// E[g(f(Y))], Y ~ N(mean, L L^T), by Gauss-Hermite in the whitened variable of
/// the kernel tilted by f's envelope.
inline double hermite_expectation(const TestFunction& f, const Outer& g, const Vec& mean, const Mat& lower,
                                  const HermiteGrid& grid) {
    if (f.terms().empty())
        return g(f.constant_part());
    const int n = f.dim();
    const auto env = envelope_of(f);
    double sum = 0.0;
    Vec y(n);
    if (!env) {
        for (std::size_t j = 0; j < grid.size(); ++j) {
            y.noalias() = mean + lower * grid.node(j);
            sum += grid.w[j] * g(f(y));
        }
        return sum;
    }
    const double g_inf = g(f.constant_part());
    const GaussianTilt tilt = gaussian_tilt(mean, lower, env->center, env->A, env->sqrtA);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        y.noalias() = tilt.mean + tilt.lower * grid.node(j);
        const double h = g(f(y)) - g_inf;
        if (h == 0.0)
            continue;
        const Vec d = y - env->center;
        sum += grid.w[j] * h * std::exp(tilt.log_mass + d.dot(env->A * d));
    }
    return g_inf + sum;
}

/// Calls visit(y, w) on Hermite nodes for Y ~ N(mean, L L^T), tilted by the
/// envelope of f when it has one. Sum of w * h(y) approximates E[h(Y)] for any
/// h that decays with f (e.g. its derivatives).
template <class Visit>
void for_each_tilted_node(const TestFunction& f, const Vec& mean, const Mat& lower, const HermiteGrid& grid,
                          Visit&& visit) {
    const auto env = envelope_of(f);
    Vec y(f.dim());
    if (!env) {
        for (std::size_t j = 0; j < grid.size(); ++j) {
            y.noalias() = mean + lower * grid.node(j);
            visit(y, grid.w[j]);
        }
        return;
    }
    const GaussianTilt tilt = gaussian_tilt(mean, lower, env->center, env->A, env->sqrtA);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        y.noalias() = tilt.mean + tilt.lower * grid.node(j);
        const Vec d = y - env->center;
        visit(y, grid.w[j] * std::exp(tilt.log_mass + d.dot(env->A * d)));
    }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// f(m + L z) and f(m - L z) for a time slice f, with every plain Gaussian term's
/// exponent precomputed as q0 +/- b.z + z.M.z. Polynomial terms use direct evaluation.
class WhitenedSlice {
public:
    WhitenedSlice(TestFunction f, const Vec& mean, const Mat& lower) : f_(std::move(f)), mean_(mean), lower_(lower) {
        for (const auto& g : f_.terms()) {
            if (g.has_poly()) {
                generic_ = true;
                return;
            }
        }
        for (const auto& g : f_.terms()) {
            const Vec d = mean - g.center;
            const Vec Ad = g.A * d;
            terms_.push_back(Term{g.amplitude, d.dot(Ad), 2.0 * lower.transpose() * Ad,
                                  lower.transpose() * g.A * lower});
        }
    }

    std::pair<double, double> antithetic(const Vec& z) const {
        if (generic_) {
            const Vec dy = lower_ * z;
            return {f_(Vec(mean_ + dy)), f_(Vec(mean_ - dy))};
        }
        const int n = static_cast<int>(z.size());
        const double* zp = z.data();
        double plus = f_.constant_part(), minus = plus;
        for (const auto& t : terms_) {
            double even = t.q0, odd = 0.0;
            const double* m = t.M.data();
            for (int j = 0; j < n; ++j) {
                double row = 0.0;
                for (int i = 0; i < n; ++i)
                    row += m[j * n + i] * zp[i];
                even += zp[j] * row;
                odd += t.b.data()[j] * zp[j];
            }
            plus += t.amplitude * std::exp(-(even + odd));
            minus += t.amplitude * std::exp(-(even - odd));
        }
        return {plus, minus};
    }

private:
    struct Term {
        double amplitude;
        double q0;
        Vec b;
        Mat M;
    };
    TestFunction f_;
    Vec mean_;
    Mat lower_;
    bool generic_ = false;
    std::vector<Term> terms_;
};

} // namespace detail

/// Kernel geometries on a fixed set of times, shared by every evaluation point.
/// Immutable after construction.
class SemigroupContext {
public:
    SemigroupContext(HormanderPair pair, QuadratureSpec quad, std::vector<double> times)
        : pair_(std::move(pair)), quad_(quad), times_(std::move(times)) {
        quad_.validate();
        geometry_.reserve(times_.size());
        for (double t : times_)
            geometry_.push_back(kernel_geometry(pair_, t, quad_));
    }

    /// Context on the tau mesh of `quad` plus the tail cut-off tau_cap (last node).
    static SemigroupContext on_tau_mesh(const HormanderPair& pair, const QuadratureSpec& quad) {
        TauMesh mesh = TauMesh::build(quad);
        std::vector<double> t = mesh.tau;
        t.push_back(mesh.cap);
        SemigroupContext ctx(pair, quad, std::move(t));
        ctx.mesh_ = std::move(mesh);
        return ctx;
    }

    const HormanderPair& pair() const noexcept { return pair_; }
    const QuadratureSpec& quad() const noexcept { return quad_; }
    const std::vector<double>& times() const noexcept { return times_; }
    const KernelGeometry& geometry(std::size_t i) const { return geometry_.at(i); }
    const TauMesh& mesh() const noexcept { return mesh_; }
    std::size_t size() const noexcept { return times_.size(); }

    /// Built on first use; safe to call from several threads.
    const HermiteGrid& hermite_grid() const {
        std::call_once(lazy_->once, [&] { lazy_->grid = HermiteGrid::build(pair_.dim(), quad_.hermite_order); });
        return lazy_->grid;
    }

private:
    HormanderPair pair_;
    QuadratureSpec quad_;
    std::vector<double> times_;
    std::vector<KernelGeometry> geometry_;
    TauMesh mesh_;
    struct Lazy {
        std::once_flag once;
        HermiteGrid grid;
    };
    std::shared_ptr<Lazy> lazy_ = std::make_shared<Lazy>();
};

namespace detail {

inline void check_point(const HormanderPair& pair, const TestFunction& u, const SpaceTimePoint& p) {
    if (p.X.size() != pair.dim())
        throw InvalidInput("point dimension does not match the operator");
    if (u.dim() != pair.dim() + 1)
        throw InvalidInput("function must be defined on R^{N+1}");
    if (!p.X.allFinite() || !std::isfinite(p.t))
        throw InvalidInput("non-finite evaluation point");
}

} // namespace detail

/// sum_i coef[i] * (P^K_{tau_i}[g(u)](X,t) - g(u(X,t))) over the context times.
///
/// Exact: closed-form Gaussian expectations (g must be polynomial).
/// Hermite: tensor Gauss-Hermite in the tilted whitened variable.
/// Monte Carlo: antithetic draws shared by all times, so the standard error
/// is that of the whole functional.
inline Estimate semigroup_functional(const SemigroupContext& ctx, const TestFunction& u, const Outer& g,
                                     const SpaceTimePoint& p, std::span<const double> coef, Engine engine,
                                     std::uint64_t stream = 0, std::span<double> node_values = {}) {
    detail::check_point(ctx.pair(), u, p);
    if (coef.size() != ctx.size())
        throw InvalidInput("semigroup_functional: coefficient count does not match the context");
    const bool record = !node_values.empty();
    if (record && node_values.size() != ctx.size())
        throw InvalidInput("semigroup_functional: node value buffer has the wrong size");
    if (record)
        std::fill(node_values.begin(), node_values.end(), 0.0);
    const double g0 = g(u(p.joined()));
    Estimate out;
    switch (engine) {
    case Engine::exact: {
        const auto coefs = g.polynomial_coefficients();
        if (!coefs)
            throw Unsupported("exact engine needs a polynomial integrand; use hermite or mc");
        const TestFunction G = TestFunction::compose_polynomial(u, *coefs);
        double s = 0.0;
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            if (coef[i] == 0.0)
                continue;
            const KernelGeometry& geo = ctx.geometry(i);
            const TestFunction slice = G.time_slice(p.t - geo.tau);
            const double f = gaussian_expectation_factored(slice, geo.mean(p.X), geo.cov_lower()) - g0;
            if (record)
                node_values[i] = f;
            s += coef[i] * f;
        }
        out.value = s;
        break;
    }
    case Engine::hermite: {
        const HermiteGrid& grid = ctx.hermite_grid();
        double s = 0.0;
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            if (coef[i] == 0.0)
                continue;
            const KernelGeometry& geo = ctx.geometry(i);
            const TestFunction slice = u.time_slice(p.t - geo.tau);
            const double f = detail::hermite_expectation(slice, g, geo.mean(p.X), geo.cov_lower(), grid) - g0;
            if (record)
                node_values[i] = f;
            s += coef[i] * f;
        }
        out.value = s;
        break;
    }
    case Engine::monte_carlo: {
        const int n = ctx.pair().dim();
        std::vector<detail::WhitenedSlice> nodes;
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            if (coef[i] == 0.0)
                continue;
            const KernelGeometry& geo = ctx.geometry(i);
            active.push_back(i);
            nodes.emplace_back(u.time_slice(p.t - geo.tau), geo.mean(p.X), geo.cov_lower());
        }
        const int samples = ctx.quad().mc_samples;
        constexpr int kChunk = 1024;
        double sum = 0.0, sum_sq = 0.0;
        Vec z(n);
        for (int start = 0; start < samples; start += kChunk) {
            std::mt19937_64 rng(detail::splitmix64(ctx.quad().mc_seed ^ detail::splitmix64(stream)) ^
                                detail::splitmix64(static_cast<std::uint64_t>(start)));
            std::normal_distribution<double> normal;
            const int stop = std::min(samples, start + kChunk);
            for (int k = start; k < stop; ++k) {
                for (int d = 0; d < n; ++d)
                    z(d) = normal(rng);
                double phi = 0.0;
                for (std::size_t a = 0; a < active.size(); ++a) {
                    const auto [fp, fm] = nodes[a].antithetic(z);
                    const double f = 0.5 * (g(fp) + g(fm)) - g0;
                    if (record)
                        node_values[active[a]] += f;
                    phi += coef[active[a]] * f;
                }
                sum += phi;
                sum_sq += phi * phi;
            }
        }
        if (record)
            for (double& v : node_values)
                v /= samples;
        const double mean = sum / samples;
        const double var = samples > 1 ? std::max(0.0, (sum_sq - samples * mean * mean) / (samples - 1)) : 0.0;
        out.value = mean;
        out.std_error = std::sqrt(var / samples);
        break;
    }
    }
    return out;
}

/// P_t f(X) = int p(X, Y, t) f(Y) dY for f on R^N.
inline Estimate apply_Pt(const HormanderPair& pair, const TestFunction& f, const Vec& X, double t,
                         const QuadratureSpec& quad = {}, Engine engine = Engine::exact, std::uint64_t stream = 0) {
    if (f.dim() != pair.dim() || X.size() != pair.dim())
        throw InvalidInput("apply_Pt: dimension mismatch");
    if (!(t > 0.0))
        throw InvalidInput("apply_Pt: t must be positive");
    const SemigroupContext ctx(pair, quad, {t});
    // A time-independent lift turns P_t into the evolutive functional with one node.
    const TestFunction u = f.lift_time_independent();
    const double c = 1.0;
    const Estimate e = semigroup_functional(ctx, u, Outer::identity(), {X, 0.0}, std::span<const double>(&c, 1),
                                            engine, stream);
    return Estimate{e.value + f(X), e.std_error};
}

/// P^K_tau u(X, t) = int p(X, Y, tau) u(Y, t - tau) dY.
inline Estimate apply_PK(const HormanderPair& pair, const TestFunction& u, const Vec& X, double t, double tau,
                         const QuadratureSpec& quad = {}, Engine engine = Engine::exact, std::uint64_t stream = 0) {
    if (!(tau > 0.0))
        throw InvalidInput("apply_PK: tau must be positive");
    const SemigroupContext ctx(pair, quad, {tau});
    const SpaceTimePoint p{X, t};
    const double c = 1.0;
    const Estimate e =
        semigroup_functional(ctx, u, Outer::identity(), p, std::span<const double>(&c, 1), engine, stream);
    return Estimate{e.value + u(p.joined()), e.std_error};
}

/// Monte Carlo estimate of P^K_tau u(X, t) with its standard error.
inline Estimate mc_apply_PK(const HormanderPair& pair, const TestFunction& u, const Vec& X, double t, double tau,
                            const QuadratureSpec& quad = {}, std::uint64_t stream = 0) {
    if (quad.mc_samples < 1000)
        throw InvalidInput("mc_apply_PK: need at least 1000 samples");
    return apply_PK(pair, u, X, t, tau, quad, Engine::monte_carlo, stream);
}

/// |d/dtau U - K U| at (X, t, tau) for U = P^K_tau u: central difference in tau,
/// spatial and time derivatives pushed through a kernel-whitened Hermite rule.
inline double cauchy_residual(const HormanderPair& pair, const TestFunction& u, const Vec& X, double t, double tau,
                              double h, const QuadratureSpec& quad = {}) {
    if (!(h > 0.0) || !(tau > h))
        throw InvalidInput("cauchy_residual: need tau > h > 0");
    if (h > 0.5 * tau)
        throw InvalidInput("cauchy_residual: step too large (h > tau/2)");
    detail::check_point(pair, u, {X, t});
    const int n = pair.dim();
    const HermiteGrid grid = HermiteGrid::build(n, quad.hermite_order);
    auto evolve = [&](double s) {
        const KernelGeometry geo = kernel_geometry(pair, s, quad);
        const TestFunction slice = u.time_slice(t - s);
        return detail::hermite_expectation(slice, Outer::identity(), geo.mean(X), geo.cov_lower(), grid);
    };
    const double dU = (evolve(tau + h) - evolve(tau - h)) / (2.0 * h);

    const KernelGeometry geo = kernel_geometry(pair, tau, quad);
    Vec grad = Vec::Zero(n);
    Mat hess = Mat::Zero(n, n);
    double dt = 0.0;
    Vec z(n + 1);
    z(n) = t - tau;
    detail::for_each_tilted_node(u.time_slice(t - tau), geo.mean(X), geo.cov_lower(), grid,
                                 [&](const Vec& y, double w) {
                                     z.head(n) = y;
                                     const Vec gu = u.gradient(z);
                                     grad += w * gu.head(n);
                                     hess += w * u.hessian(z).topLeftCorner(n, n);
                                     dt += w * gu(n);
                                 });
    // Chain rule through Y = e^{tau B} X + ...: d/dX = e^{tau B}^T d/dY; d/dt acts on the slice time.
    const Vec gradX = geo.flow.transpose() * grad;
    const Mat hessX = geo.flow.transpose() * hess * geo.flow;
    const double KU = (pair.Q() * hessX).trace() + (pair.B() * X).dot(gradX) - dt;
    return std::abs(dU - KU);
}

/// int p(X, Y, t) dX over a whitened Hermite grid in X; equals e^{-t tr B}.
inline double dual_mass(const HormanderPair& pair, const Vec& Y, double t, const QuadratureSpec& quad = {}) {
    const int n = pair.dim();
    const KernelGeometry geo = kernel_geometry(pair, t, quad);
    const HermiteGrid grid = HermiteGrid::build(n, quad.hermite_order);
    const Mat inv_flow = mat_exp(pair.B(), -t);
    const Mat lc = geo.cov_lower();
    // X = e^{-tB}(Y - sqrt2 L z): |dX/dz| = e^{-t tr B} 2^{N/2} det(L).
    const double log_jac = -t * pair.trace_B() + 0.5 * n * std::log(2.0) + 0.5 * geo.logdet_tK;
    double sum = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const Eigen::VectorXd zj = grid.node(j);
        const Vec X = inv_flow * (Y - lc * zj);
        const double log_phi = -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * zj.squaredNorm();
        sum += grid.w[j] * std::exp(log_kernel(geo, X, Y) + log_jac - log_phi);
    }
    return sum;
}

} // namespace kfp
