#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "kfp/errors.hpp"
#include "kfp/fractional.hpp"
#include "kfp/hormander.hpp"
#include "kfp/phi.hpp"
#include "kfp/semigroup.hpp"
#include "kfp/testfn.hpp"

namespace kfp {

/// One evaluated residual of a check.
struct CheckRow {
    std::string check;
    std::string label;  ///< sub-case within the check
    double s = 0.0;
    std::size_t point_index = 0;
    SpaceTimePoint point;
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
    double tolerance = 0.0;
    double std_error = 0.0;
    Engine engine = Engine::exact;
    std::string verdict;  ///< pass | fail | error
    std::string message;

    bool passed() const { return verdict == "pass"; }
};

struct CheckReport {
    std::string name;
    std::uint64_t digest = 0;
    std::vector<CheckRow> rows;

    bool pass() const {
        for (const auto& r : rows)
            if (!r.passed())
                return false;
        return !rows.empty();
    }
    double max_residual() const {
        double m = 0.0;
        for (const auto& r : rows)
            m = std::max(m, r.residual);
        return m;
    }
};

// ---------------------------------------------------------------------------
// Configuration digest.

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

inline void append_number(std::string& out, double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g,", x);
    out += buf;
}

inline void append_matrix(std::string& out, const Mat& m) {
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            append_number(out, m(i, j));
}

} // namespace detail

inline std::string describe(const HormanderPair& pair) {
    std::string out = "pair:" + std::to_string(pair.dim()) + ":";
    detail::append_matrix(out, pair.Q());
    detail::append_matrix(out, pair.B());
    return out;
}

inline std::string describe(const TestFunction& f) {
    std::string out = "fn:" + std::to_string(f.dim()) + ":";
    detail::append_number(out, f.constant_part());
    for (const auto& g : f.terms()) {
        out += "[";
        detail::append_number(out, g.amplitude);
        detail::append_matrix(out, g.center);
        detail::append_matrix(out, g.A);
        for (const auto& m : g.poly.terms()) {
            for (int i = 0; i < f.dim(); ++i)
                out += std::to_string(m.exponent[i]) + ".";
            detail::append_number(out, m.coef);
        }
        out += "]";
    }
    return out;
}

inline std::string describe(const QuadratureSpec& q) {
    std::string out = "quad:";
    for (int v : {q.hermite_order, q.mc_samples, q.tau_panels, q.tau_panel_order, q.tail_panels, q.tail_order,
                  q.covariance_order, q.radial_panels, q.radial_order, q.angular_order})
        out += std::to_string(v) + ",";
    out += std::to_string(q.mc_seed) + ",";
    detail::append_number(out, q.tau_floor);
    detail::append_number(out, q.tau_cap);
    return out;
}

inline std::uint64_t config_digest(const std::string& check, const HormanderPair& pair, const TestFunction& u,
                                   const std::string& phi, double s, const QuadratureSpec& q) {
    std::string all = check + "|" + describe(pair) + "|" + describe(u) + "|" + phi + "|";
    detail::append_number(all, s);
    all += describe(q);
    return fnv1a(all);
}

// ---------------------------------------------------------------------------
// Evaluation points.

/// Origin, 0.5 along each space-time axis, then generic points; `count` in total.
inline std::vector<SpaceTimePoint> default_points(int N, std::size_t count = 5) {
    std::vector<Vec> z;
    z.push_back(Vec::Zero(N + 1));
    for (int i = 0; i <= N; ++i)
        z.push_back(0.5 * Vec::Unit(N + 1, i));
    const double generic[][8] = {{0.31, -0.27, 0.19, -0.13, 0.23, -0.17, 0.11, 0.07},
                                 {-0.42, 0.36, -0.21, 0.28, -0.16, 0.12, -0.09, 0.05}};
    for (const auto& g : generic) {
        Vec v(N + 1);
        for (int i = 0; i <= N; ++i)
            v(i) = g[i];
        z.push_back(v);
    }
    std::vector<SpaceTimePoint> out;
    for (std::size_t k = 0; k < std::min(count, z.size()); ++k)
        out.push_back(SpaceTimePoint{z[k].head(N), z[k](N)});
    return out;
}

namespace detail {

inline CheckRow make_row(const std::string& check, const std::string& label, double s, std::size_t idx,
                         const SpaceTimePoint& p, double lhs, double rhs, double residual, double tol, Engine e,
                         double se = 0.0) {
    CheckRow r;
    r.check = check;
    r.label = label;
    r.s = s;
    r.point_index = idx;
    r.point = p;
    r.lhs = lhs;
    r.rhs = rhs;
    r.residual = residual;
    r.tolerance = tol;
    r.std_error = se;
    r.engine = e;
    r.verdict = std::isfinite(residual) && residual <= tol ? "pass" : "fail";
    return r;
}

/// Value at eps = 0 of the quadratic through (eps_i, y_i).
inline double extrapolate_to_zero(const std::vector<double>& eps, const std::vector<double>& y) {
    if (eps.size() != y.size() || eps.size() < 2)
        throw InvalidInput("extrapolation needs at least two samples");
    double out = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        double l = 1.0;
        for (std::size_t j = 0; j < eps.size(); ++j)
            if (j != i)
                l *= (0.0 - eps[j]) / (eps[i] - eps[j]);
        out += l * y[i];
    }
    return out;
}

inline std::uint64_t stream_of(std::size_t point, double s, std::uint64_t salt) {
    std::string key = std::to_string(point) + ":" + std::to_string(salt) + ":";
    append_number(key, s);
    return fnv1a(key);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Checks.

/// (-K)^s(u^2) = 2u (-K)^s u - 2 Gamma^K_(s)(u). The left side always uses the
/// closed-form engine, the right side the requested one.
inline CheckReport check_square_rule(const SemigroupContext& ctx, const TestFunction& u,
                                     const std::vector<SpaceTimePoint>& points, double s,
                                     Engine engine = Engine::hermite, std::uint64_t salt = 0) {
    CheckReport rep{"square_rule", config_digest("square_rule", ctx.pair(), u, "", s, ctx.quad()), {}};
    const TestFunction u2 = u * u;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const std::uint64_t stream = detail::stream_of(i, s, salt ^ 1);
        const double u0 = u(p.joined());
        const double lhs = frac_K(ctx, u2, p, s, Engine::exact).value;
        const Estimate a = frac_K(ctx, u, p, s, engine, Outer::identity(), stream);
        const Estimate g = carre_evolutive(ctx, u, p, s, engine, stream);
        const double rhs = 2.0 * u0 * a.value - 2.0 * g.value;
        const double se = 2.0 * std::abs(u0) * a.std_error + 2.0 * g.std_error;
        const double tol = std::max({1e-6, 1e-4 * std::abs(lhs), 4.0 * se});
        rep.rows.push_back(
            detail::make_row(rep.name, "", s, i, p, lhs, rhs, std::abs(lhs - rhs), tol, engine, se));
    }
    return rep;
}

/// (-K)^s phi(u) <= phi'(u) (-K)^s u for convex phi. For quadratic phi the gap
/// must also equal 2a Gamma^K_(s)(u).
inline CheckReport check_convexity_inequality(const SemigroupContext& ctx, const TestFunction& u,
                                              const PhiFunction& phi, const std::vector<SpaceTimePoint>& points,
                                              double s, Engine engine = Engine::exact, std::uint64_t salt = 0) {
    if (!phi.convex())
        throw InvalidInput("check_convexity_inequality: phi is not convex on its interval");
    CheckReport rep{"convexity", config_digest("convexity", ctx.pair(), u, phi.describe(), s, ctx.quad()), {}};
    const Engine phi_engine = (engine == Engine::exact && !phi.polynomial_coefficients()) ? Engine::hermite : engine;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const std::uint64_t stream = detail::stream_of(i, s, salt ^ 2);
        const double u0 = u(p.joined());
        const Estimate l = frac_K(ctx, u, p, s, phi_engine, Outer::of(phi), stream);
        const Estimate r = frac_K(ctx, u, p, s, phi_engine, Outer::identity(), stream);
        const double lhs = l.value;
        const double rhs = phi.d1(u0) * r.value;
        const double se = l.std_error + std::abs(phi.d1(u0)) * r.std_error;
        const double tol = 1e-6 * (1.0 + std::abs(rhs)) + 4.0 * se;
        rep.rows.push_back(detail::make_row(rep.name, phi.name(), s, i, p, lhs, rhs, std::max(0.0, lhs - rhs), tol,
                                            phi_engine, se));
        if (phi.is_quadratic()) {
            const double gap = rhs - lhs;
            const double expected = 2.0 * phi.quadratic_coefficient() * carre_evolutive(ctx, u, p, s).value;
            const double scale = 1.0 + std::abs(lhs) + std::abs(rhs);
            rep.rows.push_back(detail::make_row(rep.name, "quadratic-gap", s, i, p, gap, expected,
                                                std::abs(gap - expected), 1e-6 * scale + 4.0 * se, phi_engine, se));
        }
    }
    return rep;
}

/// Heat pair, u(X,t) = v(X): Gamma^K_(s)(u) equals the direct Gamma_(s)(v).
inline CheckReport check_tind_reduction(const TestFunction& v, const std::vector<SpaceTimePoint>& points, double s,
                                        const QuadratureSpec& quad = {}) {
    const HormanderPair heat = HormanderPair::heat(v.dim());
    const TestFunction u = v.lift_time_independent();
    const auto ctx = SemigroupContext::on_tau_mesh(heat, quad);
    CheckReport rep{"tind_reduction", config_digest("tind_reduction", heat, u, "", s, quad), {}};
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const double lhs = carre_evolutive(ctx, u, p, s).value;
        const double rhs = carre_direct(v, p.X, s, quad);
        rep.rows.push_back(detail::make_row(rep.name, "", s, i, p, lhs, rhs, std::abs(lhs - rhs),
                                            1e-4 * (1.0 + std::abs(rhs)), Engine::exact));
    }
    return rep;
}

/// s -> 1 behaviour on a grid of orders: (a) Gamma_(s)(v) -> |grad v|^2,
/// (b) -(-Delta)^s phi(v) -> phi'(v) Lap v + phi''(v) |grad v|^2 (both by
/// quadratic extrapolation in 1-s, v = u(., t)), (c) |R^K_(s)| strictly decreasing.
inline CheckReport check_s_limits(const SemigroupContext& ctx, const TestFunction& u, const PhiFunction& phi,
                                  const std::vector<SpaceTimePoint>& points,
                                  const std::vector<double>& s_grid = {0.9, 0.95, 0.99},
                                  Engine engine = Engine::exact) {
    if (s_grid.size() < 3)
        throw InvalidInput("check_s_limits: need at least three orders");
    for (std::size_t k = 0; k < s_grid.size(); ++k) {
        check_order(s_grid[k]);
        if (k > 0 && !(s_grid[k] > s_grid[k - 1]))
            throw InvalidInput("check_s_limits: orders must increase");
    }
    CheckReport rep{"s_limits", config_digest("s_limits", ctx.pair(), u, phi.describe(), s_grid.back(), ctx.quad()),
                    {}};
    const QuadratureSpec& quad = ctx.quad();
    const int N = ctx.pair().dim();
    std::vector<double> eps;
    for (double s : s_grid)
        eps.push_back(1.0 - s);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (N <= 3) {
            const TestFunction v = u.time_slice(p.t);
            const double v0 = v(p.X);
            const Vec grad = v.gradient(p.X);
            const double lap = v.laplacian(p.X);
            // Limits equal to zero (critical points) are judged on the scale of v.
            const double floor = 1e-2 * (v0 * v0 + grad.squaredNorm() + 1e-2);

            std::vector<double> ga;
            for (double s : s_grid)
                ga.push_back(carre_direct(v, p.X, s, quad));
            const double ea = detail::extrapolate_to_zero(eps, ga);
            const double ta = grad.squaredNorm();
            rep.rows.push_back(detail::make_row(rep.name, "carre-limit", 1.0, i, p, ea, ta, std::abs(ea - ta),
                                                0.05 * std::max(std::abs(ta), floor), Engine::exact));

            std::vector<double> gb;
            for (double s : s_grid)
                gb.push_back(-frac_laplacian_direct(v, phi, p.X, s, quad));
            const double eb = detail::extrapolate_to_zero(eps, gb);
            const double tb = phi.d1(v0) * lap + phi.d2(v0) * grad.squaredNorm();
            rep.rows.push_back(detail::make_row(rep.name, "local-chain-limit", 1.0, i, p, eb, tb, std::abs(eb - tb),
                                                0.05 * std::max(std::abs(tb), floor), Engine::exact));
        }
        std::vector<double> rem;
        for (double s : s_grid)
            rem.push_back(std::abs(remainder(ctx, u, phi, p, s, engine).value));
        if (phi.is_quadratic()) {
            const double m = *std::max_element(rem.begin(), rem.end());
            rep.rows.push_back(
                detail::make_row(rep.name, "remainder-vanishes", 1.0, i, p, m, 0.0, m, 1e-6, engine));
        } else {
            double worst = 0.0;
            for (std::size_t k = 1; k < rem.size(); ++k)
                worst = std::max(worst, rem[k - 1] > 0.0 ? rem[k] / rem[k - 1]
                                                         : std::numeric_limits<double>::infinity());
            // Strict decrease: every successive ratio below one.
            rep.rows.push_back(detail::make_row(rep.name, "remainder-decay", 1.0, i, p, rem.back(), rem.front(),
                                                worst, std::nextafter(1.0, 0.0), engine));
        }
    }
    return rep;
}

/// The remainder computed along the Hermite and Monte Carlo paths must agree
/// within 4 standard errors; for quadratic phi it must vanish.
inline CheckReport check_general_chain_rule(const SemigroupContext& ctx, const TestFunction& u,
                                            const PhiFunction& phi, const std::vector<SpaceTimePoint>& points,
                                            double s, std::uint64_t salt = 0) {
    CheckReport rep{"general_chain_rule",
                    config_digest("general_chain_rule", ctx.pair(), u, phi.describe(), s, ctx.quad()), {}};
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const Estimate h = remainder(ctx, u, phi, p, s, Engine::hermite);
        const Estimate m = remainder(ctx, u, phi, p, s, Engine::monte_carlo, detail::stream_of(i, s, salt ^ 3));
        rep.rows.push_back(detail::make_row(rep.name, "hermite-vs-mc", s, i, p, h.value, m.value,
                                            std::abs(h.value - m.value), 4.0 * m.std_error + 1e-9,
                                            Engine::monte_carlo, m.std_error));
        if (phi.is_quadratic())
            rep.rows.push_back(detail::make_row(rep.name, "quadratic-vanishes", s, i, p, h.value, 0.0,
                                                std::abs(h.value), 1e-6, Engine::hermite));
    }
    return rep;
}

// Convenience overloads building the context from (pair, quad).

inline CheckReport check_square_rule(const HormanderPair& pair, const TestFunction& u,
                                     const std::vector<SpaceTimePoint>& points, double s, const QuadratureSpec& quad,
                                     Engine engine = Engine::hermite) {
    return check_square_rule(SemigroupContext::on_tau_mesh(pair, quad), u, points, s, engine);
}

inline CheckReport check_convexity_inequality(const HormanderPair& pair, const TestFunction& u,
                                              const PhiFunction& phi, const std::vector<SpaceTimePoint>& points,
                                              double s, const QuadratureSpec& quad, Engine engine = Engine::exact) {
    return check_convexity_inequality(SemigroupContext::on_tau_mesh(pair, quad), u, phi, points, s, engine);
}

inline CheckReport check_s_limits(const HormanderPair& pair, const TestFunction& u, const PhiFunction& phi,
                                  const std::vector<SpaceTimePoint>& points, const std::vector<double>& s_grid,
                                  const QuadratureSpec& quad, Engine engine = Engine::exact) {
    return check_s_limits(SemigroupContext::on_tau_mesh(pair, quad), u, phi, points, s_grid, engine);
}

inline CheckReport check_general_chain_rule(const HormanderPair& pair, const TestFunction& u,
                                            const PhiFunction& phi, const std::vector<SpaceTimePoint>& points,
                                            double s, const QuadratureSpec& quad) {
    return check_general_chain_rule(SemigroupContext::on_tau_mesh(pair, quad), u, phi, points, s);
}

} // namespace kfp
