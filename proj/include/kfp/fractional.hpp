#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "kfp/errors.hpp"
#include "kfp/hormander.hpp"
#include "kfp/linalg.hpp"
#include "kfp/phi.hpp"
#include "kfp/quadrature.hpp"
#include "kfp/semigroup.hpp"
#include "kfp/testfn.hpp"

namespace kfp {

inline constexpr double kMaxOrder = 1.0 - 1e-3;

inline void check_order(double s) {
    if (!(s > 0.0 && s <= kMaxOrder))
        throw InvalidInput("fractional order s must lie in (0, 0.999]");
}

inline double gamma_fn(double x) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw InvalidInput("gamma_fn: argument must be positive and finite");
    return std::tgamma(x);
}

/// s 2^{2s} Gamma((n+2s)/2) / (pi^{n/2} Gamma(1-s)).
inline double gamma_ns(int n, double s) {
    if (n < 1)
        throw InvalidInput("gamma_ns: n must be >= 1");
    if (!(s > 0.0 && s < 1.0))
        throw InvalidInput("gamma_ns: s must lie in (0, 1)");
    return s * std::exp2(2.0 * s) * gamma_fn(0.5 * n + s) /
           (std::pow(std::numbers::pi, 0.5 * n) * gamma_fn(1.0 - s));
}

/// Area of the unit sphere S^{n-1}.
inline double sphere_area(int n) {
    return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

// ---------------------------------------------------------------------------
// Direct (real-space) operators on R^n, n = 1, 2, 3.

namespace detail {

/// Geometry of a decaying TestFunction: value at infinity, finest and coarsest widths.
struct FieldShape {
    double finest = 1.0;
    std::vector<double> width;
    std::vector<Vec> center;

    double radius(const Vec& x) const {
        double r = 0.0;
        for (std::size_t k = 0; k < width.size(); ++k)
            r = std::max(r, (x - center[k]).norm() + 10.0 * width[k]);
        return r;
    }
};

inline FieldShape shape_of(const TestFunction& v) {
    FieldShape sh;
    double finest = std::numeric_limits<double>::infinity();
    for (const auto& g : v.terms()) {
        const double lo = min_eigenvalue(g.A);
        if (!(lo > 0.0))
            throw Unsupported("direct operators need every Gaussian term to decay in all directions");
        sh.width.push_back(1.0 / std::sqrt(lo));
        sh.center.push_back(g.center);
        finest = std::min(finest, 1.0 / std::sqrt(max_eigenvalue(g.A)));
    }
    sh.finest = std::isfinite(finest) ? finest : 1.0;
    return sh;
}

/// v itself.
struct PlainField {
    const TestFunction& v;
    double value(const Vec& x) const { return v(x); }
    Vec gradient(const Vec& x) const { return v.gradient(x); }
    Mat hessian(const Vec& x) const { return v.hessian(x); }
    double at_infinity() const { return v.constant_part(); }
};

/// phi(v).
struct ComposedField {
    const TestFunction& v;
    Outer phi;
    double value(const Vec& x) const { return phi(v(x)); }
    Vec gradient(const Vec& x) const { return phi.d1(v(x)) * v.gradient(x); }
    Mat hessian(const Vec& x) const {
        const double y = v(x);
        const Vec g = v.gradient(x);
        return phi.d2(y) * g * g.transpose() + phi.d1(y) * v.hessian(x);
    }
    double at_infinity() const { return phi(v.constant_part()); }
};

/// Spherical rule on S^{n-1} adapted to radius r relative to the finest width.
inline void sphere_rule(int n, double r_over_width, int base, std::vector<Vec>& dirs, std::vector<double>& w) {
    dirs.clear();
    w.clear();
    const int refine = static_cast<int>(std::ceil(std::max(1.0, r_over_width)));
    if (n == 1) {
        Vec d(1);
        d(0) = 1.0;
        dirs.push_back(d);
        w.push_back(1.0);
        dirs.push_back(-d);
        w.push_back(1.0);
        return;
    }
    if (n == 2) {
        const int m = std::max(base, base * refine);
        for (int j = 0; j < m; ++j) {
            const double th = 2.0 * std::numbers::pi * (j + 0.5) / m;
            Vec d(2);
            d << std::cos(th), std::sin(th);
            dirs.push_back(d);
            w.push_back(2.0 * std::numbers::pi / m);
        }
        return;
    }
    const int mu = std::max(base, (base / 2) * refine);
    const int mphi = 2 * mu;
    const Rule gl = gauss_legendre(mu);
    for (int i = 0; i < mu; ++i) {
        const double c = gl.nodes[i];
        const double sn = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int j = 0; j < mphi; ++j) {
            const double ph = 2.0 * std::numbers::pi * (j + 0.5) / mphi;
            Vec d(3);
            d << sn * std::cos(ph), sn * std::sin(ph), c;
            dirs.push_back(d);
            w.push_back(gl.weights[i] * 2.0 * std::numbers::pi / mphi);
        }
    }
}

enum class DirectKind { laplacian, carre };

/// (gamma/2) int_0^inf r^{-1-2s} D(r) dr with D the spherical integral of the
/// symmetric second difference (laplacian) or the squared increment (carre).
template <class Field>
double direct_radial(const Field& f, const FieldShape& sh, const Vec& x, double s, const QuadratureSpec& q,
                     DirectKind kind) {
    const int n = static_cast<int>(x.size());
    if (n < 1 || n > 3)
        throw Unsupported("direct operators support n = 1, 2, 3 only");
    check_order(s);
    q.validate();
    const double v0 = f.value(x);
    const double c = f.at_infinity();
    if (sh.width.empty())
        return 0.0;
    const double ell = sh.finest;
    const double area = sphere_area(n);
    const double e = 2.0 - 2.0 * s;

    std::vector<Vec> dirs;
    std::vector<double> dw;
    auto spherical = [&](double r) {
        sphere_rule(n, r / ell, q.angular_order, dirs, dw);
        double acc = 0.0;
        Vec y(n);
        for (std::size_t j = 0; j < dirs.size(); ++j) {
            if (kind == DirectKind::laplacian) {
                y = x + r * dirs[j];
                double d = 2.0 * v0 - f.value(y);
                y = x - r * dirs[j];
                d -= f.value(y);
                acc += dw[j] * d;
            } else {
                y = x + r * dirs[j];
                const double d = v0 - f.value(y);
                acc += dw[j] * d * d;
            }
        }
        return acc;
    };

    const Rule base = gauss_legendre(q.radial_order);
    auto panel = [&](double a, double b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double r = 0.5 * (a + b) + 0.5 * (b - a) * base.nodes[i];
            acc += 0.5 * (b - a) * base.weights[i] * std::pow(r, -1.0 - 2.0 * s) * spherical(r);
        }
        return acc;
    };

    const double r_near = ell * std::exp2(-q.radial_panels);
    double total = 0.0;
    // Second-order Taylor closing on (0, r_near].
    if (kind == DirectKind::laplacian)
        total += -area * f.hessian(x).trace() / n * std::pow(r_near, e) / e;
    else
        total += area * f.gradient(x).squaredNorm() / n * std::pow(r_near, e) / e;
    for (int k = q.radial_panels; k >= 1; --k)
        total += panel(ell * std::exp2(-k), ell * std::exp2(-k + 1));
    const double R = std::max(sh.radius(x), 2.0 * ell);
    const int far = static_cast<int>(std::ceil((R - ell) / (0.5 * ell)));
    const double h = (R - ell) / far;
    for (int k = 0; k < far; ++k)
        total += panel(ell + k * h, ell + (k + 1) * h);
    // Beyond R the field equals its value at infinity.
    const double d = v0 - c;
    total += (kind == DirectKind::laplacian ? 2.0 * area * d : area * d * d) * std::pow(R, -2.0 * s) / (2.0 * s);
    return 0.5 * gamma_ns(n, s) * total;
}

} // namespace detail

/// (-Delta)^s v(x) from the symmetric singular integral.
inline double frac_laplacian_direct(const TestFunction& v, const Vec& x, double s, const QuadratureSpec& quad = {}) {
    if (x.size() != v.dim())
        throw InvalidInput("frac_laplacian_direct: dimension mismatch");
    const auto sh = detail::shape_of(v);
    return detail::direct_radial(detail::PlainField{v}, sh, x, s, quad, detail::DirectKind::laplacian);
}

/// (-Delta)^s [phi(v)](x).
inline double frac_laplacian_direct(const TestFunction& v, const PhiFunction& phi, const Vec& x, double s,
                                    const QuadratureSpec& quad = {}) {
    if (x.size() != v.dim())
        throw InvalidInput("frac_laplacian_direct: dimension mismatch");
    const auto sh = detail::shape_of(v);
    return detail::direct_radial(detail::ComposedField{v, Outer::of(phi)}, sh, x, s, quad,
                                 detail::DirectKind::laplacian);
}

/// Gamma_(s)(v)(x) = (gamma/2) int (v(x) - v(y))^2 / |x-y|^{n+2s} dy.
inline double carre_direct(const TestFunction& v, const Vec& x, double s, const QuadratureSpec& quad = {}) {
    if (x.size() != v.dim())
        throw InvalidInput("carre_direct: dimension mismatch");
    const auto sh = detail::shape_of(v);
    return detail::direct_radial(detail::PlainField{v}, sh, x, s, quad, detail::DirectKind::carre);
}

// ---------------------------------------------------------------------------
// Semigroup-side operators.

/// K g(u) at a point: g'(u) K u + g''(u) <Q grad u, grad u>.
inline double generator_value(const HormanderPair& pair, const TestFunction& u, const Outer& g,
                              const SpaceTimePoint& p) {
    const LocalJet j = local_jet(u, p);
    const double Ku = (pair.Q() * j.hess).trace() + (pair.B() * p.X).dot(j.grad) - j.dt;
    return g.d1(j.value) * Ku + g.d2(j.value) * j.grad.dot(pair.Q() * j.grad);
}

/// int_0^inf tau^{-1-kappa} [P_tau g(u)(X,t) - g(u(X,t))] dtau on the context's tau mesh.
/// The context must come from SemigroupContext::on_tau_mesh.
inline Estimate tau_integral(const SemigroupContext& ctx, const TestFunction& u, const Outer& g,
                             const SpaceTimePoint& p, double kappa, Engine engine, std::uint64_t stream = 0) {
    const TauMesh& mesh = ctx.mesh();
    if (mesh.tau.empty() || ctx.size() != mesh.size() + 1)
        throw InvalidInput("tau_integral: context was not built on a tau mesh");
    if (!(kappa > 0.0))
        throw InvalidInput("tau_integral: exponent must be positive");
    const std::size_t m = mesh.size();
    std::vector<double> coef(m + 1), values(m + 1);
    for (std::size_t i = 0; i < m; ++i)
        coef[i] = mesh.weight[i] * std::pow(mesh.tau[i], -1.0 - kappa);
    coef[m] = std::pow(mesh.cap, -kappa) / kappa;
    Estimate est = semigroup_functional(ctx, u, g, p, coef, engine, stream, values);

    // Closing on (0, tau_floor]: F(tau) ~ c tau^beta.
    const double beta = g.small_time_order();
    if (!(beta > kappa))
        throw ConvergenceError("tau integral diverges at 0 (need kappa < small-time order)");
    const double c = g.has_generator() ? generator_value(ctx.pair(), u, g, p)
                                       : values[0] / std::pow(mesh.tau[0], beta);
    est.value += c * std::pow(mesh.floor, beta - kappa) / (beta - kappa);

    if (engine != Engine::monte_carlo) {
        const double tail_error = std::abs(values[m] - values[m - 1]) * coef[m];
        if (tail_error > 1e-6 * std::abs(est.value) + 1e-12)
            throw ConvergenceError("tau tail not converged at tau_cap (estimated error " +
                                   std::to_string(tail_error) + ")");
    }
    return est;
}

/// (-K)^s [g(u)](X, t) = -(s/Gamma(1-s)) int tau^{-1-s} [P_tau g(u) - g(u)] dtau.
inline Estimate frac_K(const SemigroupContext& ctx, const TestFunction& u, const SpaceTimePoint& p, double s,
                       Engine engine = Engine::exact, const Outer& g = Outer::identity(), std::uint64_t stream = 0) {
    check_order(s);
    const double c = -s / gamma_fn(1.0 - s);
    const Estimate e = tau_integral(ctx, u, g, p, s, engine, stream);
    return Estimate{c * e.value, std::abs(c) * e.std_error};
}

inline double frac_K(const HormanderPair& pair, const TestFunction& u, const Vec& X, double t, double s,
                     const QuadratureSpec& quad = {}, Engine engine = Engine::exact) {
    const auto ctx = SemigroupContext::on_tau_mesh(pair, quad);
    return frac_K(ctx, u, {X, t}, s, engine).value;
}

/// Gamma^K_(s)(u) = (s / (2 Gamma(1-s))) int tau^{-1-s} P_tau((u - u(X,t))^2) dtau.
inline Estimate carre_evolutive(const SemigroupContext& ctx, const TestFunction& u, const SpaceTimePoint& p, double s,
                                Engine engine = Engine::exact, std::uint64_t stream = 0) {
    check_order(s);
    const double u0 = u(p.joined());
    const double c = s / (2.0 * gamma_fn(1.0 - s));
    const Estimate e = tau_integral(ctx, u, Outer::deviation(u0), p, s, engine, stream);
    return Estimate{c * e.value, c * e.std_error};
}

inline double carre_evolutive(const HormanderPair& pair, const TestFunction& u, const Vec& X, double t, double s,
                              const QuadratureSpec& quad = {}, Engine engine = Engine::exact) {
    const auto ctx = SemigroupContext::on_tau_mesh(pair, quad);
    return carre_evolutive(ctx, u, {X, t}, s, engine).value;
}

/// R = (-K)^s phi(u) - phi'(u)(-K)^s u + phi''(u) Gamma^K_(s)(u), evaluated as one
/// tau integral of P_tau applied to the second-order Taylor remainder of phi at u(X,t).
inline Estimate remainder(const SemigroupContext& ctx, const TestFunction& u, const PhiFunction& phi,
                          const SpaceTimePoint& p, double s, Engine engine = Engine::exact, std::uint64_t stream = 0) {
    check_order(s);
    const double u0 = u(p.joined());
    if (!phi.contains(u0))
        throw RangeViolation("u(X,t) lies outside the interval of phi");
    if (engine == Engine::exact && !phi.polynomial_coefficients())
        engine = Engine::hermite;
    const double c = -s / gamma_fn(1.0 - s);
    const Estimate e = tau_integral(ctx, u, Outer::taylor_remainder(phi, u0), p, s, engine, stream);
    return Estimate{c * e.value, std::abs(c) * e.std_error};
}

inline double remainder(const HormanderPair& pair, const TestFunction& u, const PhiFunction& phi, const Vec& X,
                        double t, double s, const QuadratureSpec& quad = {}, Engine engine = Engine::exact) {
    const auto ctx = SemigroupContext::on_tau_mesh(pair, quad);
    return remainder(ctx, u, phi, {X, t}, s, engine).value;
}

/// int_0^inf tau^{-1-s-N/2} exp(-r^2 / (4 tau)) dtau on the tau mesh.
inline double subordination_integral(int N, double s, double r, const QuadratureSpec& quad = {}) {
    if (N < 1 || !(r > 0.0))
        throw InvalidInput("subordination_integral: need N >= 1 and r > 0");
    check_order(s);
    const TauMesh mesh = TauMesh::build(quad);
    const double kappa = s + 0.5 * N;
    double acc = 0.0;
    for (std::size_t i = 0; i < mesh.size(); ++i)
        acc += mesh.weight[i] * std::pow(mesh.tau[i], -1.0 - kappa) * std::exp(-r * r / (4.0 * mesh.tau[i]));
    // Beyond tau_cap the exponential is 1 to within r^2 / (4 tau_cap).
    acc += std::pow(mesh.cap, -kappa) / kappa;
    return acc;
}

/// 2^{N+2s} Gamma((N+2s)/2) / r^{N+2s}.
inline double subordination_integral_exact(int N, double s, double r) {
    const double a = N + 2.0 * s;
    return std::exp2(a) * gamma_fn(0.5 * a) / std::pow(r, a);
}

// ---------------------------------------------------------------------------
// Global quantities.

/// Tensor Gauss-Legendre grid over an axis-aligned box in (X, t).
struct BoxGrid {
    Vec lo;
    Vec hi;
    int panels = 4;
    int order = 6;

    void validate() const {
        if (lo.size() != hi.size() || lo.size() < 1)
            throw InvalidInput("BoxGrid: lo/hi size mismatch");
        if (!(lo.array() < hi.array()).all())
            throw InvalidInput("BoxGrid: need lo < hi on every axis");
        if (panels < 1 || order < 1)
            throw InvalidInput("BoxGrid: panels and order must be positive");
    }

    /// Same density on the box with doubled half-widths about the same center.
    BoxGrid doubled() const {
        const Vec mid = 0.5 * (lo + hi);
        return BoxGrid{mid + 2.0 * (lo - mid), mid + 2.0 * (hi - mid), 2 * panels, order};
    }

    template <class F>
    double integrate(F&& f) const {
        validate();
        const int d = static_cast<int>(lo.size());
        const int per_axis = panels * order;
        const Rule r = gauss_legendre(order);
        std::vector<std::vector<double>> nodes(d), weights(d);
        for (int a = 0; a < d; ++a) {
            const double h = (hi(a) - lo(a)) / panels;
            for (int p = 0; p < panels; ++p)
                for (int i = 0; i < order; ++i) {
                    nodes[a].push_back(lo(a) + h * p + 0.5 * h * (r.nodes[i] + 1.0));
                    weights[a].push_back(0.5 * h * r.weights[i]);
                }
        }
        double acc = 0.0;
        Vec z(d);
        for_each_tensor_index(d, per_axis, [&](const int* idx) {
            double w = 1.0;
            for (int a = 0; a < d; ++a) {
                z(a) = nodes[a][idx[a]];
                w *= weights[a][idx[a]];
            }
            acc += w * f(z);
        });
        return acc;
    }
};

/// int_0^inf tau^{-alpha p/2 - 1} P_tau(|u - u(X,t)|^p)(X, t) dtau.
inline double besov_integrand(const SemigroupContext& ctx, const TestFunction& u, const SpaceTimePoint& pt,
                              double alpha, double p) {
    const double u0 = u(pt.joined());
    const Engine e = p == 2.0 ? Engine::exact : Engine::hermite;
    return tau_integral(ctx, u, Outer::deviation(u0, p), pt, 0.5 * alpha * p, e).value;
}

/// Evolutive Besov seminorm of u, with the (X, t) integral truncated to `box`.
/// With check_truncation the box is doubled and a change above 1% throws.
inline double besov_seminorm(const HormanderPair& pair, const TestFunction& u, double alpha, double p,
                             const QuadratureSpec& quad, const BoxGrid& box, bool check_truncation = true) {
    if (!(p >= 1.0) || !(alpha > 0.0))
        throw InvalidInput("besov_seminorm: need p >= 1 and alpha > 0");
    if (box.lo.size() != pair.dim() + 1)
        throw InvalidInput("besov_seminorm: box must live in R^{N+1}");
    const auto ctx = SemigroupContext::on_tau_mesh(pair, quad);
    const int n = pair.dim();
    auto over = [&](const BoxGrid& b) {
        return b.integrate([&](const Vec& z) {
            return besov_integrand(ctx, u, SpaceTimePoint{z.head(n), z(n)}, alpha, p);
        });
    };
    const double inner = over(box);
    if (check_truncation) {
        const double wide = over(box.doubled());
        if (std::abs(wide - inner) > 0.01 * std::abs(wide))
            throw ConvergenceError("besov_seminorm: box truncation changes the result by more than 1%");
    }
    return std::pow(std::max(0.0, inner), 1.0 / p);
}

namespace detail {

/// (gamma(1,s)/2) int_0^inf h^{-1-2s} int (v(x) - v(x+h))^2 dx dh at one radial order.
inline double aronszajn_at_order(const TestFunction& v, const FieldShape& sh, double s, const QuadratureSpec& q,
                                 int order) {
    double a = std::numeric_limits<double>::infinity(), b = -a;
    for (std::size_t k = 0; k < sh.width.size(); ++k) {
        a = std::min(a, sh.center[k](0) - 10.0 * sh.width[k]);
        b = std::max(b, sh.center[k](0) + 10.0 * sh.width[k]);
    }
    const double ell = sh.finest;
    const double c = v.constant_part();
    const Rule base = gauss_legendre(order);
    Vec x(1), y(1);
    auto integrate_x = [&](double lo, double hi, auto&& f) {
        const int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / (0.5 * ell))));
        const double h = (hi - lo) / panels;
        double acc = 0.0;
        for (int p = 0; p < panels; ++p)
            for (std::size_t i = 0; i < base.size(); ++i) {
                x(0) = lo + h * p + 0.5 * h * (base.nodes[i] + 1.0);
                acc += 0.5 * h * base.weights[i] * f(x);
            }
        return acc;
    };
    auto increment = [&](double h) {
        return integrate_x(a - h, b, [&](const Vec& z) {
            y(0) = z(0) + h;
            const double d = v(z) - v(y);
            return d * d;
        });
    };
    auto h_panel = [&](double lo, double hi) {
        double acc = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double h = 0.5 * (lo + hi) + 0.5 * (hi - lo) * base.nodes[i];
            acc += 0.5 * (hi - lo) * base.weights[i] * std::pow(h, -1.0 - 2.0 * s) * increment(h);
        }
        return acc;
    };
    const double e = 2.0 - 2.0 * s;
    const double h_near = ell * std::exp2(-q.radial_panels);
    const double grad_sq = integrate_x(a, b, [&](const Vec& z) {
        const double g = v.gradient(z)(0);
        return g * g;
    });
    const double dev_sq = integrate_x(a, b, [&](const Vec& z) {
        const double d = v(z) - c;
        return d * d;
    });
    double total = grad_sq * std::pow(h_near, e) / e;
    for (int k = q.radial_panels; k >= 1; --k)
        total += h_panel(ell * std::exp2(-k), ell * std::exp2(-k + 1));
    const double H = std::max(b - a, 2.0 * ell);
    const int far = static_cast<int>(std::ceil((H - ell) / (0.5 * ell)));
    const double step = (H - ell) / far;
    for (int k = 0; k < far; ++k)
        total += h_panel(ell + k * step, ell + (k + 1) * step);
    // Past the support diameter the two copies no longer overlap.
    total += 2.0 * dev_sq * std::pow(H, -2.0 * s) / (2.0 * s);
    return 0.5 * gamma_ns(1, s) * total;
}

} // namespace detail

/// (gamma(1,s)/4) int int (v(x) - v(y))^2 / |x-y|^{1+2s} dy dx for v on R.
inline double aronszajn_energy(const TestFunction& v, double s, const QuadratureSpec& quad = {}) {
    if (v.dim() != 1)
        throw Unsupported("aronszajn_energy: only n = 1 is supported");
    check_order(s);
    quad.validate();
    const auto sh = detail::shape_of(v);
    if (sh.width.empty())
        return 0.0;
    const double e = detail::aronszajn_at_order(v, sh, s, quad, quad.radial_order);
    const double check = detail::aronszajn_at_order(v, sh, s, quad, quad.radial_order + 8);
    if (std::abs(e - check) > 1e-6 * std::abs(check) + 1e-14)
        throw ConvergenceError("aronszajn_energy: not converged under grid refinement");
    return e;
}

} // namespace kfp
