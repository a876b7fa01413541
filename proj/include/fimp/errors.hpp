#pragma once

#include <stdexcept>
#include <string>

namespace fimp {

/// Shape disagreement between tensors (reports both shapes in the message).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerically or semantically invalid input (zero-norm vector, labels
/// outside {0,1}, ...).
class ValueError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid experiment / model configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Internal state mismatch, e.g. an optimizer step with a missing gradient.
class InconsistentStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// File format or filesystem failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Metric cannot be computed (e.g. every label column is single-class).
class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fimp
