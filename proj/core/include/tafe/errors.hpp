#pragma once

#include <stdexcept>
#include <string>

namespace tafe {

// Base of every error thrown by the library. The CLI maps the concrete kind
// onto its exit-code contract.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or geometries that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration: even kernels with same padding, bad sizes, budgets.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or out-of-range data read from disk or passed as labels.
class DataError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar node.
class UsageError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during training.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace tafe
