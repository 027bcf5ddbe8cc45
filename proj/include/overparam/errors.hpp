#pragma once

#include <stdexcept>
#include <string>

namespace overparam {

// Bad input: malformed files, non-finite entries, invalid parameters.
// The CLI maps these to exit code 2.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ParameterError : public InputError {
public:
    using InputError::InputError;
};

// Numerical failure of a well-formed problem. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateDesignError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class RankError : public NumericalError {
public:
    RankError(const std::string& what, long rank) : NumericalError(what), rank_(rank) {}
    long rank() const noexcept { return rank_; }

private:
    long rank_;
};

class ShrinkerError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, long iteration)
        : NumericalError(what), iteration_(iteration) {}
    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

class MomentError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace overparam
