#pragma once

#include <stdexcept>
#include <string>

namespace rmsolve {

// Bad scenario or parameter input. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical breakdown: non-finite state, non-convergence, overflow. Exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An engine cannot be applied to the given model/fitness pair.
class PreconditionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A checked invariant failed. Exit code 4.
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace rmsolve
