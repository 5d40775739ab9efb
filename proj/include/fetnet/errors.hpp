#pragma once

#include <stdexcept>
#include <string>

namespace fetnet {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/image dimensions do not satisfy an operation's contract.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// A parameter value is outside its documented domain.
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

/// File system or codec failure; message carries the offending path.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Training aborted (for example a loss component turned NaN).
struct TrainError : Error {
    explicit TrainError(const std::string& msg) : Error(msg) {}
};

} // namespace fetnet
