#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace apsk {

/// Caller violated a precondition (bad dimension, bad grid, unknown name).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterate became non-finite.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    IntegrationError(const std::string& what, std::size_t step, const std::string& context)
        : std::runtime_error(what + " (step " + std::to_string(step) + ", " + context + ")"),
          step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// A computation that cannot fail for correct formulas did fail.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace apsk
