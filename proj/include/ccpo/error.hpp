#pragma once

#include <stdexcept>
#include <string>

namespace ccpo {

// An argument violates an operation's documented precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An oracle was asked for something it will not compute (too large, degenerate).
class Refusal : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller-side precondition on the *state* of the inputs does not hold.
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Training produced a non-finite quantity.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidInput(what);
}

}  // namespace detail

}  // namespace ccpo
