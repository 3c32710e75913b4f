// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mgc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform to an operation's contract.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// A value lies outside an operation's mathematical domain (e.g. log of 0).
class DomainError : public Error {
   public:
    using Error::Error;
};

/// Inconsistent or unknown configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
   public:
    using Error::Error;
};

/// Malformed on-disk data (WAV, feature archive, checkpoint, manifest).
class FormatError : public Error {
   public:
    using Error::Error;
};

/// Missing or inconsistent dataset content (missing files, class mismatch).
class DataError : public Error {
   public:
    using Error::Error;
};

/// An index (class id, fold, axis) is out of range.
class IndexError : public Error {
   public:
    using Error::Error;
};

/// Caller violated an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
   public:
    using Error::Error;
};

}  // namespace mgc
