#pragma once

#include <stdexcept>
#include <string>

namespace tamamba {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible extents, ranks or geometry.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value left the finite range (NaN/Inf) or a numeric precondition failed.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Out-of-range argument that is not a shape problem (p, scale, indices...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed or foreign file content (checkpoints, PNGs, CSV manifests).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures; message carries the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tamamba
