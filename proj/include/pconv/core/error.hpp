#pragma once

#include <stdexcept>
#include <string>

namespace pconv {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument is outside the domain of the operation (zero factor, tiny image, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// An input violates a documented contract, e.g. a mask that is not strictly binary.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Network or training configuration is inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

/// Non-finite gradient or loss during optimization.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// A file could not be read or parsed.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Rejection sampling ran out of attempts for a benchmark cell.
class GenerationExhaustedError : public Error {
public:
    using Error::Error;
};

} // namespace pconv
