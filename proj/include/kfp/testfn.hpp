#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "kfp/errors.hpp"
#include "kfp/linalg.hpp"
#include "kfp/quadrature.hpp"

namespace kfp {

/// Highest total degree carried by a polynomial factor.
inline constexpr int kMaxPolyDegree = 6;

struct Monomial {
    std::array<std::uint8_t, kMaxDim> exponent{};
    double coef = 0.0;

    int degree() const {
        int d = 0;
        for (auto e : exponent)
            d += e;
        return d;
    }
};

/// Polynomial in absolute coordinates x in R^dim.
class Polynomial {
public:
    Polynomial() = default;
    explicit Polynomial(int dim) : dim_(dim) {}

    static Polynomial one(int dim) {
        Polynomial p(dim);
        p.terms_.push_back(Monomial{{}, 1.0});
        return p;
    }

    /// Single monomial coef * prod x_i^{exps[i]}.
    static Polynomial monomial(int dim, const std::vector<int>& exps, double coef = 1.0) {
        if (static_cast<int>(exps.size()) != dim)
            throw InvalidInput("Polynomial: exponent list has wrong length");
        Monomial m;
        m.coef = coef;
        for (int i = 0; i < dim; ++i) {
            if (exps[i] < 0)
                throw InvalidInput("Polynomial: negative exponent");
            m.exponent[i] = static_cast<std::uint8_t>(exps[i]);
        }
        Polynomial p(dim);
        p.terms_.push_back(m);
        if (p.degree() > kMaxPolyDegree)
            throw Unsupported("Polynomial: degree cap exceeded");
        return p;
    }

    int dim() const noexcept { return dim_; }
    const std::vector<Monomial>& terms() const noexcept { return terms_; }
    bool empty() const noexcept { return terms_.empty(); }

    int degree() const {
        int d = 0;
        for (const auto& m : terms_)
            d = std::max(d, m.degree());
        return d;
    }

    bool is_one() const {
        return terms_.size() == 1 && terms_[0].degree() == 0 && terms_[0].coef == 1.0;
    }

    void add(const Monomial& m) {
        if (m.coef == 0.0)
            return;
        for (auto& t : terms_) {
            if (t.exponent == m.exponent) {
                t.coef += m.coef;
                return;
            }
        }
        terms_.push_back(m);
    }

    template <class V>
    double operator()(const V& x) const {
        double s = 0.0;
        for (const auto& m : terms_) {
            double v = m.coef;
            for (int i = 0; i < dim_; ++i)
                for (int k = 0; k < m.exponent[i]; ++k)
                    v *= x(i);
            s += v;
        }
        return s;
    }

    /// Partial derivative with respect to variable i.
    Polynomial derivative(int i) const {
        Polynomial out(dim_);
        for (const auto& m : terms_) {
            if (m.exponent[i] == 0)
                continue;
            Monomial d = m;
            d.coef *= m.exponent[i];
            d.exponent[i] -= 1;
            out.add(d);
        }
        return out;
    }

    Polynomial operator*(const Polynomial& o) const {
        if (dim_ != o.dim_)
            throw InvalidInput("Polynomial: dimension mismatch");
        Polynomial out(dim_);
        for (const auto& a : terms_)
            for (const auto& b : o.terms_) {
                Monomial m;
                m.coef = a.coef * b.coef;
                for (int i = 0; i < kMaxDim; ++i)
                    m.exponent[i] = static_cast<std::uint8_t>(a.exponent[i] + b.exponent[i]);
                out.add(m);
            }
        if (out.degree() > kMaxPolyDegree)
            throw Unsupported("Polynomial: degree cap " + std::to_string(kMaxPolyDegree) + " exceeded");
        return out;
    }

    Polynomial scaled(double c) const {
        Polynomial out = *this;
        for (auto& m : out.terms_)
            m.coef *= c;
        return out;
    }

    /// Fixes the last variable to `value`, returning a polynomial in dim-1 variables.
    Polynomial fix_last(double value) const {
        Polynomial out(dim_ - 1);
        for (const auto& m : terms_) {
            Monomial r = m;
            const int e = m.exponent[dim_ - 1];
            r.exponent[dim_ - 1] = 0;
            r.coef *= std::pow(value, e);
            out.add(r);
        }
        return out;
    }

    /// Appends one variable that does not occur.
    Polynomial lifted() const {
        Polynomial out = *this;
        out.dim_ = dim_ + 1;
        return out;
    }

private:
    int dim_ = 0;
    std::vector<Monomial> terms_;
};

/// amplitude * poly(x) * exp(-(x - center)^T A (x - center)); A symmetric PSD.
struct GaussTerm {
    double amplitude = 0.0;
    Vec center;
    Mat A;
    Polynomial poly;  ///< empty means the constant 1
    Mat sqrtA;        ///< symmetric square root of A, cached at construction

    int dim() const { return static_cast<int>(center.size()); }
    bool has_poly() const { return !poly.empty() && !poly.is_one(); }
    int degree() const { return poly.empty() ? 0 : poly.degree(); }

    template <class V>
    double exponent(const V& x) const {
        Vec d = x - center;
        return d.dot(A * d);
    }
};

namespace detail {

inline void finalize_term(GaussTerm& g) {
    g.A = symmetrize(g.A);
    g.sqrtA = psd_sqrt(g.A);
    if (!g.poly.empty() && g.poly.dim() != g.dim())
        throw InvalidInput("GaussTerm: polynomial dimension mismatch");
}

} // namespace detail

/// A constant plus a finite sum of polynomial-times-Gaussian terms on R^d.
/// Closed under sums, products, Gaussian expectation and time slicing.
class TestFunction {
public:
    TestFunction() = default;
    explicit TestFunction(int dim, double constant = 0.0) : dim_(dim), constant_(constant) {
        if (dim < 1 || dim > kMaxDim)
            throw InvalidInput("TestFunction: dimension out of range");
    }

    static TestFunction constant(int dim, double c) { return TestFunction(dim, c); }

    static TestFunction gaussian(double amplitude, const Vec& center, const Mat& A,
                                 Polynomial poly = {}) {
        const int d = static_cast<int>(center.size());
        if (A.rows() != d || A.cols() != d)
            throw InvalidInput("TestFunction: inverse-scale matrix has wrong shape");
        if (!A.allFinite() || !center.allFinite() || !std::isfinite(amplitude))
            throw InvalidInput("TestFunction: non-finite parameters");
        const double scale = std::max(A.cwiseAbs().maxCoeff(), 1.0);
        if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw InvalidInput("TestFunction: inverse-scale matrix is not symmetric");
        if (min_eigenvalue(A) < -1e-12 * scale)
            throw InvalidInput("TestFunction: inverse-scale matrix is not positive semidefinite");
        TestFunction f(d);
        GaussTerm g{amplitude, center, A, std::move(poly), {}};
        if (g.poly.degree() > kMaxPolyDegree)
            throw Unsupported("TestFunction: polynomial degree cap exceeded");
        detail::finalize_term(g);
        f.terms_.push_back(std::move(g));
        return f;
    }

    /// exp(-|x - center|^2 / width^2) scaled by amplitude.
    static TestFunction isotropic(double amplitude, const Vec& center, double width = 1.0) {
        const int d = static_cast<int>(center.size());
        return gaussian(amplitude, center, Mat::Identity(d, d) / (width * width));
    }

    /// Pure polynomial (A = 0), used for moment computations.
    static TestFunction polynomial(const Polynomial& p) {
        const int d = p.dim();
        return gaussian(1.0, Vec::Zero(d), Mat::Zero(d, d), p);
    }

    int dim() const noexcept { return dim_; }
    double constant_part() const noexcept { return constant_; }
    const std::vector<GaussTerm>& terms() const noexcept { return terms_; }

    /// All inverse-scale matrices positive definite (rapid decay to the constant).
    bool decays() const {
        for (const auto& g : terms_)
            if (!(min_eigenvalue(g.A) > 0.0))
                return false;
        return true;
    }

    int max_degree() const {
        int d = 0;
        for (const auto& g : terms_)
            d = std::max(d, g.degree());
        return d;
    }

    template <class V>
    double operator()(const V& x) const {
        check_dim(x.size());
        double s = constant_;
        for (const auto& g : terms_) {
            const double e = g.amplitude * std::exp(-g.exponent(x));
            s += g.has_poly() ? e * g.poly(x) : e;
        }
        return s;
    }

    Vec gradient(const Vec& x) const {
        check_dim(x.size());
        Vec out = Vec::Zero(dim_);
        for (const auto& g : terms_) {
            const Vec v = -2.0 * (g.A * (x - g.center));
            const double e = g.amplitude * std::exp(-g.exponent(x));
            if (!g.has_poly()) {
                out += e * v;
                continue;
            }
            const double p = g.poly(x);
            for (int i = 0; i < dim_; ++i)
                out(i) += e * (g.poly.derivative(i)(x) + p * v(i));
        }
        return out;
    }

    Mat hessian(const Vec& x) const {
        check_dim(x.size());
        Mat out = Mat::Zero(dim_, dim_);
        for (const auto& g : terms_) {
            const Vec v = -2.0 * (g.A * (x - g.center));
            const double e = g.amplitude * std::exp(-g.exponent(x));
            const Mat base = v * v.transpose() - 2.0 * g.A;
            if (!g.has_poly()) {
                out += e * base;
                continue;
            }
            const double p = g.poly(x);
            Vec dp(dim_);
            for (int i = 0; i < dim_; ++i)
                dp(i) = g.poly.derivative(i)(x);
            Mat ddp(dim_, dim_);
            for (int i = 0; i < dim_; ++i) {
                const Polynomial di = g.poly.derivative(i);
                for (int j = 0; j < dim_; ++j)
                    ddp(i, j) = di.derivative(j)(x);
            }
            out += e * (ddp + dp * v.transpose() + v * dp.transpose() + p * base);
        }
        return out;
    }

    double laplacian(const Vec& x) const { return hessian(x).trace(); }

    TestFunction& operator+=(const TestFunction& o) {
        check_dim(o.dim_);
        constant_ += o.constant_;
        terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
        return *this;
    }

    TestFunction& operator*=(double c) {
        constant_ *= c;
        for (auto& g : terms_)
            g.amplitude *= c;
        return *this;
    }

    TestFunction operator+(const TestFunction& o) const {
        TestFunction r = *this;
        r += o;
        return r;
    }
    TestFunction operator-(const TestFunction& o) const { return *this + (-1.0) * o; }
    TestFunction operator+(double c) const {
        TestFunction r = *this;
        r.constant_ += c;
        return r;
    }
    TestFunction operator-(double c) const { return *this + (-c); }
    friend TestFunction operator*(double c, TestFunction f) {
        f *= c;
        return f;
    }

    /// Pointwise product; Gaussian exponents are combined by completing the square.
    TestFunction operator*(const TestFunction& o) const {
        check_dim(o.dim_);
        TestFunction r(dim_, constant_ * o.constant_);
        if (o.constant_ != 0.0)
            for (const auto& g : terms_) {
                GaussTerm h = g;
                h.amplitude *= o.constant_;
                r.terms_.push_back(std::move(h));
            }
        if (constant_ != 0.0)
            for (const auto& g : o.terms_) {
                GaussTerm h = g;
                h.amplitude *= constant_;
                r.terms_.push_back(std::move(h));
            }
        for (const auto& a : terms_)
            for (const auto& b : o.terms_)
                r.terms_.push_back(multiply_terms(a, b));
        return r;
    }

    /// sum_k coefs[k] * f^k.
    static TestFunction compose_polynomial(const TestFunction& f, const std::vector<double>& coefs) {
        TestFunction result(f.dim_, 0.0);
        TestFunction power(f.dim_, 1.0);
        for (std::size_t k = 0; k < coefs.size(); ++k) {
            if (k > 0)
                power = power * f;
            if (coefs[k] != 0.0)
                result += coefs[k] * power;
        }
        return result;
    }

    /// Embeds a function of X in R^N as the time-independent function u(X, t) = v(X).
    TestFunction lift_time_independent() const {
        TestFunction r(dim_ + 1, constant_);
        for (const auto& g : terms_) {
            GaussTerm h;
            h.amplitude = g.amplitude;
            h.center = Vec::Zero(dim_ + 1);
            h.center.head(dim_) = g.center;
            h.A = Mat::Zero(dim_ + 1, dim_ + 1);
            h.A.topLeftCorner(dim_, dim_) = g.A;
            if (!g.poly.empty())
                h.poly = g.poly.lifted();
            detail::finalize_term(h);
            r.terms_.push_back(std::move(h));
        }
        return r;
    }

    /// The function y -> f(y, sigma) on R^{dim-1} (last coordinate is time).
    TestFunction time_slice(double sigma) const {
        if (dim_ < 2)
            throw InvalidInput("time_slice: function has no time variable");
        const int n = dim_ - 1;
        TestFunction r(n, constant_);
        r.terms_.reserve(terms_.size());
        for (const auto& g : terms_) {
            const Mat ayy = g.A.topLeftCorner(n, n);
            const Vec ayt = g.A.col(n).head(n);
            const double att = g.A(n, n);
            const double delta = sigma - g.center(n);
            GaussTerm h;
            h.center = g.center.head(n);
            h.A = ayy;
            double rest = att * delta * delta;
            if (ayt.cwiseAbs().maxCoeff() > 0.0) {
                const Vec w = psd_pinv(ayy) * ayt;
                if ((ayy * w - ayt).norm() > 1e-10 * std::max(ayt.norm(), 1.0))
                    throw Unsupported("time_slice: space-time coupling outside the spatial range");
                h.center -= w * delta;
                rest -= delta * delta * ayt.dot(w);
            }
            h.amplitude = g.amplitude * std::exp(-std::max(rest, 0.0));
            if (!g.poly.empty())
                h.poly = g.poly.fix_last(sigma);
            h.sqrtA = g.sqrtA.rows() == dim_ && ayt.cwiseAbs().maxCoeff() == 0.0
                          ? Mat(g.sqrtA.topLeftCorner(n, n))
                          : psd_sqrt(h.A);
            r.terms_.push_back(std::move(h));
        }
        return r;
    }

private:
    void check_dim(Eigen::Index d) const {
        if (d != dim_)
            throw InvalidInput("TestFunction: dimension mismatch (" + std::to_string(d) + " vs " +
                               std::to_string(dim_) + ")");
    }

    static GaussTerm multiply_terms(const GaussTerm& a, const GaussTerm& b) {
        GaussTerm g;
        g.A = symmetrize(a.A + b.A);
        const Vec rhs = a.A * a.center + b.A * b.center;
        g.center = psd_pinv(g.A) * rhs;
        const double rest = a.center.dot(a.A * a.center) + b.center.dot(b.A * b.center) - g.center.dot(rhs);
        g.amplitude = a.amplitude * b.amplitude * std::exp(-std::max(rest, 0.0));
        if (a.has_poly() && b.has_poly())
            g.poly = a.poly * b.poly;
        else if (a.has_poly())
            g.poly = a.poly;
        else if (b.has_poly())
            g.poly = b.poly;
        detail::finalize_term(g);
        return g;
    }

    int dim_ = 0;
    double constant_ = 0.0;
    std::vector<GaussTerm> terms_;
};

/// Result of tilting N(m, S) by exp(-(y - mu)^T A (y - mu)):
///   E[exp(-(Y-mu)^T A (Y-mu))] = exp(log_mass), and the tilted law is N(mean, L L^T).
struct GaussianTilt {
    double log_mass = 0.0;
    Vec mean;
    Mat lower;
};

/// Tilt of N(m, L L^T) by a Gaussian factor with inverse scale A (PSD, symmetric
/// root sqrtA). Uses only factors of S, never S^{-1}, so it is stable both for
/// nearly singular S (small times) and for very large S (long times).
inline GaussianTilt gaussian_tilt(const Vec& m, const Mat& lower, const Vec& mu, const Mat& A, const Mat& sqrtA) {
    const auto n = m.size();
    GaussianTilt out;
    const Vec d = m - mu;
    // log-mass through G = I + 2 W S W, W = A^{1/2}: no cancellation in the quadratic form.
    const Mat ws = sqrtA * lower;
    Mat g = Mat::Identity(n, n) + 2.0 * ws * ws.transpose();
    Eigen::LLT<Mat> gl(symmetrize(g));
    const Vec wd = gl.matrixL().solve(Vec(sqrtA * d));
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        logdet += 2.0 * std::log(Mat(gl.matrixL())(i, i));
    out.log_mass = -0.5 * logdet - wd.squaredNorm();
    // Posterior factor L H^{-T} with H = I + 2 L^T A L.
    const Mat la = lower.transpose() * sqrtA;
    Mat h = Mat::Identity(n, n) + 2.0 * la * la.transpose();
    Eigen::LLT<Mat> hl(symmetrize(h));
    const Mat hlow = hl.matrixL();
    // lower * hlow^{-T}: solve hlow X^T = lower^T.
    out.lower = hlow.triangularView<Eigen::Lower>().solve(Mat(lower.transpose())).transpose();
    const Mat sp = out.lower * out.lower.transpose();
    out.mean = m - 2.0 * sp * (A * d);
    return out;
}

namespace detail {

/// E[p(m + L z)] for z standard normal; exact via a Gauss-Hermite tensor rule
/// of order floor(deg/2) + 1.
inline double polynomial_moment(const Polynomial& p, const Vec& m, const Mat& lower) {
    const int deg = p.degree();
    if (deg <= 1)
        return p(m);
    const int order = deg / 2 + 1;
    const Rule r = gauss_hermite(order);
    const int n = static_cast<int>(m.size());
    double sum = 0.0;
    Vec z(n);
    for_each_tensor_index(n, order, [&](const int* idx) {
        double w = 1.0;
        for (int i = 0; i < n; ++i) {
            z(i) = r.nodes[idx[i]];
            w *= r.weights[idx[i]];
        }
        sum += w * p(Vec(m + lower * z));
    });
    return sum;
}

} // namespace detail

/// E[f(Y)] for Y ~ N(m, L L^T), given the lower factor L.
inline double gaussian_expectation_factored(const TestFunction& f, const Vec& m, const Mat& lower) {
    if (m.size() != f.dim() || lower.rows() != f.dim())
        throw InvalidInput("gaussian_expectation: dimension mismatch");
    double s = f.constant_part();
    for (const auto& g : f.terms()) {
        const GaussianTilt tilt = gaussian_tilt(m, lower, g.center, g.A, g.sqrtA);
        double e = g.amplitude * std::exp(tilt.log_mass);
        if (g.has_poly())
            e *= detail::polynomial_moment(g.poly, tilt.mean, tilt.lower);
        s += e;
    }
    return s;
}

/// E[f(Y)] for Y ~ N(m, S), S symmetric positive definite; exact for the closed class.
inline double gaussian_expectation(const TestFunction& f, const Vec& m, const Mat& S) {
    const SpdFactor fac(S);
    return gaussian_expectation_factored(f, m, fac.lower());
}

/// A point (X, t) of space-time.
struct SpaceTimePoint {
    Vec X;
    double t = 0.0;

    Vec joined() const {
        Vec z(X.size() + 1);
        z.head(X.size()) = X;
        z(X.size()) = t;
        return z;
    }
};

/// Value, spatial gradient/Hessian and time derivative of u at (X, t).
struct LocalJet {
    double value = 0.0;
    Vec grad;
    Mat hess;
    double dt = 0.0;
};

inline LocalJet local_jet(const TestFunction& u, const SpaceTimePoint& p) {
    const int n = static_cast<int>(p.X.size());
    if (u.dim() != n + 1)
        throw InvalidInput("local_jet: function must live on R^{N+1}");
    const Vec z = p.joined();
    const Vec g = u.gradient(z);
    const Mat h = u.hessian(z);
    return LocalJet{u(z), g.head(n), h.topLeftCorner(n, n), g(n)};
}

} // namespace kfp
