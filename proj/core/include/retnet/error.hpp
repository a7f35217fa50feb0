// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace retnet {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// A configuration or argument value outside its allowed range.
struct ParameterError : Error {
    using Error::Error;
};

/// An API precondition was violated (missing state, non-scalar loss, ...).
struct ContractError : Error {
    using Error::Error;
};

/// A computation produced or encountered a non-finite value.
struct NumericError : Error {
    using Error::Error;
};

/// Bad caller-supplied data (out-of-range token id, overlong sequence).
struct InputError : Error {
    using Error::Error;
};

/// A persisted artifact (checkpoint) failed validation.
struct IntegrityError : Error {
    using Error::Error;
};

/// A text config could not be parsed.
struct ParseError : Error {
    using Error::Error;
};

} // namespace retnet
