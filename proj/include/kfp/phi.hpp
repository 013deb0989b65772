#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kfp/errors.hpp"

namespace kfp {

/// Scalar nonlinearity phi with analytic phi' and phi'' on an interval U.
class PhiFunction {
public:
    enum class Kind { quadratic, power, exponential, softabs };

    static PhiFunction quadratic(double a, double b, double c) {
        PhiFunction p(Kind::quadratic);
        p.a_ = a;
        p.b_ = b;
        p.c_ = c;
        return p;
    }
    static PhiFunction power(int k) {
        if (k < 2)
            throw InvalidInput("PhiFunction::power: exponent must be >= 2");
        PhiFunction p(Kind::power);
        p.k_ = k;
        return p;
    }
    static PhiFunction exponential() { return PhiFunction(Kind::exponential); }
    /// sqrt(t^2 + eps^2): a C^infinity convex stand-in for |t|.
    static PhiFunction softabs(double eps) {
        if (!(eps > 0.0))
            throw InvalidInput("PhiFunction::softabs: eps must be positive");
        PhiFunction p(Kind::softabs);
        p.a_ = eps;
        return p;
    }

    PhiFunction on(double lo, double hi) const {
        if (!(lo < hi))
            throw InvalidInput("PhiFunction: empty interval");
        PhiFunction p = *this;
        p.lo_ = lo;
        p.hi_ = hi;
        return p;
    }

    Kind kind() const noexcept { return kind_; }
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    bool bounded_interval() const noexcept { return std::isfinite(lo_) && std::isfinite(hi_); }
    bool contains(double t) const noexcept { return t >= lo_ && t <= hi_; }
    /// Hoelder exponent of phi'' on U (all kinds here are smooth).
    double holder_exponent() const noexcept { return 1.0; }

    double operator()(double t) const {
        switch (kind_) {
        case Kind::quadratic: return (a_ * t + b_) * t + c_;
        case Kind::power: return ipow(t, k_);
        case Kind::exponential: return std::exp(t);
        case Kind::softabs: return std::sqrt(t * t + a_ * a_);
        }
        return 0.0;
    }

    double d1(double t) const {
        switch (kind_) {
        case Kind::quadratic: return 2.0 * a_ * t + b_;
        case Kind::power: return k_ * ipow(t, k_ - 1);
        case Kind::exponential: return std::exp(t);
        case Kind::softabs: return t / std::sqrt(t * t + a_ * a_);
        }
        return 0.0;
    }

    double d2(double t) const {
        switch (kind_) {
        case Kind::quadratic: return 2.0 * a_;
        case Kind::power: return k_ * (k_ - 1.0) * ipow(t, k_ - 2);
        case Kind::exponential: return std::exp(t);
        case Kind::softabs: {
            const double r = std::sqrt(t * t + a_ * a_);
            return a_ * a_ / (r * r * r);
        }
        }
        return 0.0;
    }

    /// Convexity on U, decided from the closed form.
    bool convex() const {
        switch (kind_) {
        case Kind::quadratic: return a_ >= 0.0;
        case Kind::power: return k_ % 2 == 0 || lo_ >= 0.0;
        case Kind::exponential:
        case Kind::softabs: return true;
        }
        return false;
    }

    bool is_quadratic() const noexcept { return kind_ == Kind::quadratic; }
    double quadratic_coefficient() const noexcept { return kind_ == Kind::quadratic ? a_ : 0.0; }

    /// Monomial coefficients when phi is a polynomial.
    std::optional<std::vector<double>> polynomial_coefficients() const {
        if (kind_ == Kind::quadratic)
            return std::vector<double>{c_, b_, a_};
        if (kind_ == Kind::power) {
            std::vector<double> c(k_ + 1, 0.0);
            c[k_] = 1.0;
            return c;
        }
        return std::nullopt;
    }

    std::string name() const {
        switch (kind_) {
        case Kind::quadratic: return "quadratic";
        case Kind::power: return "power" + std::to_string(k_);
        case Kind::exponential: return "exp";
        case Kind::softabs: return "softabs";
        }
        return "?";
    }

    /// Full parameter listing, stable across runs.
    std::string describe() const {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s(%.17g,%.17g,%.17g,%d)[%.17g,%.17g]", name().c_str(), a_, b_, c_, k_, lo_,
                      hi_);
        return buf;
    }

private:
    explicit PhiFunction(Kind k) : kind_(k) {}

    static double ipow(double t, int k) {
        double r = 1.0;
        for (; k > 0; --k)
            r *= t;
        return r;
    }

    Kind kind_;
    double a_ = 0.0, b_ = 0.0, c_ = 0.0;
    int k_ = 2;
    double lo_ = -std::numeric_limits<double>::infinity();
    double hi_ = std::numeric_limits<double>::infinity();
};

/// Scalar map g applied to u before the semigroup acts: P_tau[g(u)].
/// Covers the integrands of every nonlocal object in the library.
class Outer {
public:
    enum class Kind {
        identity,          ///< t
        phi,               ///< phi(t)
        deviation_power,   ///< |t - c|^p
        taylor_remainder,  ///< phi(t) - phi(c) - phi'(c)(t-c) - phi''(c)(t-c)^2/2
    };

    static Outer identity() { return Outer(Kind::identity); }
    static Outer of(const PhiFunction& phi) {
        Outer o(Kind::phi);
        o.phi_ = phi;
        return o;
    }
    static Outer deviation(double center, double p = 2.0) {
        if (!(p >= 1.0))
            throw InvalidInput("Outer::deviation: p must be >= 1");
        Outer o(Kind::deviation_power);
        o.c_ = center;
        o.p_ = p;
        return o;
    }
    static Outer taylor_remainder(const PhiFunction& phi, double center) {
        Outer o(Kind::taylor_remainder);
        o.phi_ = phi;
        o.c_ = center;
        o.f0_ = phi(center);
        o.f1_ = phi.d1(center);
        o.f2_ = phi.d2(center);
        return o;
    }

    Kind kind() const noexcept { return kind_; }

    double operator()(double t) const {
        switch (kind_) {
        case Kind::identity: return t;
        case Kind::phi: check_range(t); return (*phi_)(t);
        case Kind::deviation_power: {
            const double d = std::abs(t - c_);
            return p_ == 2.0 ? d * d : std::pow(d, p_);
        }
        case Kind::taylor_remainder: {
            check_range(t);
            const double d = t - c_;
            return (*phi_)(t) - f0_ - f1_ * d - 0.5 * f2_ * d * d;
        }
        }
        return 0.0;
    }

    double d1(double t) const {
        switch (kind_) {
        case Kind::identity: return 1.0;
        case Kind::phi: return phi_->d1(t);
        case Kind::deviation_power:
            if (p_ == 2.0)
                return 2.0 * (t - c_);
            throw Unsupported("Outer: derivative of |t-c|^p for p != 2");
        case Kind::taylor_remainder: return phi_->d1(t) - f1_ - f2_ * (t - c_);
        }
        return 0.0;
    }

    double d2(double t) const {
        switch (kind_) {
        case Kind::identity: return 0.0;
        case Kind::phi: return phi_->d2(t);
        case Kind::deviation_power:
            if (p_ == 2.0)
                return 2.0;
            throw Unsupported("Outer: derivative of |t-c|^p for p != 2");
        case Kind::taylor_remainder: return phi_->d2(t) - f2_;
        }
        return 0.0;
    }

    /// Local growth exponent beta of P_tau g(u) - g(u0) ~ tau^beta as tau -> 0.
    double small_time_order() const { return kind_ == Kind::deviation_power ? 0.5 * p_ : 1.0; }
    bool has_generator() const { return kind_ != Kind::deviation_power || p_ == 2.0; }

    /// Coefficients of g as a polynomial in t, when it is one.
    std::optional<std::vector<double>> polynomial_coefficients() const {
        switch (kind_) {
        case Kind::identity: return std::vector<double>{0.0, 1.0};
        case Kind::phi: return phi_->polynomial_coefficients();
        case Kind::deviation_power:
            if (p_ == 2.0)
                return std::vector<double>{c_ * c_, -2.0 * c_, 1.0};
            return std::nullopt;
        case Kind::taylor_remainder: {
            auto pc = phi_->polynomial_coefficients();
            if (!pc)
                return std::nullopt;
            // Subtract the second-order Taylor polynomial at c, expanded in t.
            pc->resize(std::max<std::size_t>(pc->size(), 3), 0.0);
            (*pc)[0] -= f0_ - f1_ * c_ + 0.5 * f2_ * c_ * c_;
            (*pc)[1] -= f1_ - f2_ * c_;
            (*pc)[2] -= 0.5 * f2_;
            return pc;
        }
        }
        return std::nullopt;
    }

private:
    explicit Outer(Kind k) : kind_(k) {}

    void check_range(double t) const {
        if (phi_ && !phi_->contains(t))
            throw RangeViolation("u leaves the interval of phi (value " + std::to_string(t) + ")");
    }

    Kind kind_;
    std::optional<PhiFunction> phi_;
    double c_ = 0.0, p_ = 2.0;
    double f0_ = 0.0, f1_ = 0.0, f2_ = 0.0;
};

} // namespace kfp
