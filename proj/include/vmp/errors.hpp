#pragma once

#include <stdexcept>
#include <string>

namespace vmp {

// Error vocabulary shared by all modules. Everything derives from
// std::runtime_error so callers can catch broadly or by kind.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a linear solve inside discretization meets a matrix that is
// numerically singular even though the series branch did not apply.
struct ConditioningError : std::runtime_error {
    explicit ConditioningError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vmp
