#pragma once

#include <stdexcept>
#include <string>

namespace beltrami {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// A Beltrami pair whose Eq. S denominator |1+nu|^2 - |mu|^2 collapses.
class DegeneratePairError : public Error {
public:
    using Error::Error;
};

/// A matrix whose symmetric part (or that of its inverse) is not positive definite.
class NonEllipticError : public Error {
public:
    using Error::Error;
};

class ResourceError : public Error {
public:
    using Error::Error;
};

class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual, int iterations)
        : Error(what), residual_(residual), iterations_(iterations) {}
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

#define BELTRAMI_THROW_IF(cond, ExceptionType, msg) \
    do {                                            \
        if (cond) throw ExceptionType(msg);         \
    } while (0)

} // namespace beltrami
