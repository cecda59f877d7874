#pragma once

#include <stdexcept>
#include <string>

namespace credband {

/// Base class for every error raised by the library. `exit_code()` is the
/// process exit status the command-line tool reports for this category.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration, arguments, or violated preconditions.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Singular or near-singular designs, kappa underflow, degenerate estimators.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// MCMC acceptance rate or effective sample size out of bounds.
class SamplerError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ConfigError(what);
}

}  // namespace credband
