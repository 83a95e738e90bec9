#pragma once

#include <stdexcept>
#include <string>

namespace rtnmpc {

// Dimension mismatch between a vector/matrix and the problem it is used with.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (empty box, negative rate, bad file, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A non-finite value appeared during rollout, cost or gradient evaluation.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The projected-gradient iteration is blowing up; the step size is too large.
struct StepSizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rtnmpc
