#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hkoop {

/// Caller broke a documented precondition (bad dimensions, too-short input).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid or unsatisfiable configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative kernel failed to converge or produced non-finite output.
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Integration produced a non-finite state.
class DivergenceError : public NumericalFailure {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : NumericalFailure(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Internal bookkeeping went inconsistent (e.g. unpaired complex eigenvalue).
class InternalConsistencyError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace hkoop
