#pragma once

#include <stdexcept>
#include <string>

namespace mvit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A model, branch or training configuration violates one of its invariants.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a computation that cannot be carried out in floating point.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data (CIFAR batches, checkpoints, config files).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mvit
