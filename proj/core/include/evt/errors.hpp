#pragma once

#include <stdexcept>
#include <string>

namespace evt {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed bytes while decoding a file or stream. Carries the byte offset
// of the first offending record.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

// Well-formed input that violates a domain invariant (non-monotonic
// timestamps, out-of-bounds coordinates, bad polarity, ...).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
    ValidationError(const std::string& msg, std::size_t index)
        : Error(msg + " (index " + std::to_string(index) + ")"), index(index) {}
    std::size_t index = 0;
};

// Tensor/layer shape disagreement. Message names both shapes.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (bad head count, zero tau, ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Operation invoked in the wrong order (backward before forward, ...).
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

} // namespace evt
