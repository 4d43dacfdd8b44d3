#pragma once

#include <stdexcept>
#include <string>

namespace tgir {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (open, write, rename).
class IoError : public Error {
public:
    using Error::Error;
};

/// Inconsistent field dimensions or channel counts.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid argument that is not a dimension problem (empty mask, bad config value, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite state during an iterative solve or training run.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

}  // namespace tgir
