#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace kfp {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

/// K(t) is not numerically positive definite at the requested time.
class HypoellipticityViolation : public Error {
public:
    HypoellipticityViolation(double t, double min_eigenvalue)
        : Error("hypoellipticity violation at t=" + fmt(t) + " (min eigenvalue of K(t) = " + fmt(min_eigenvalue) +
                ")"),
          t_(t), min_eigenvalue_(min_eigenvalue) {}

    double time() const noexcept { return t_; }
    double min_eigenvalue() const noexcept { return min_eigenvalue_; }

private:
    static std::string fmt(double x) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", x);
        return buf;
    }

    double t_;
    double min_eigenvalue_;
};

class FactorizationError : public Error {
public:
    FactorizationError(int pivot, const std::string& what)
        : Error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}

    int pivot() const noexcept { return pivot_; }

private:
    int pivot_;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class RangeViolation : public Error {
public:
    using Error::Error;
};

class Unsupported : public Error {
public:
    using Error::Error;
};

} // namespace kfp
