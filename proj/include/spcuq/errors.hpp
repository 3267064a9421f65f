#pragma once

#include <stdexcept>
#include <string>

namespace spcuq {

// kind() feeds the structured "error.type" field in trial records.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& m) : Error("domain", m) {}
};

struct InsufficientDataError : Error {
    explicit InsufficientDataError(const std::string& m) : Error("insufficient_data", m) {}
};

struct InputError : Error {
    explicit InputError(const std::string& m) : Error("input", m) {}
};

struct FileError : Error {
    explicit FileError(const std::string& m) : Error("file", m) {}
};

enum class Side { upper, lower };

inline const char* side_name(Side s) { return s == Side::upper ? "upper" : "lower"; }

// Raised when an operation needs a residual side that has no members.
// Carries which side so callers can decide on a fallback.
class SideUndefinedError : public Error {
public:
    SideUndefinedError(Side side, const std::string& msg)
        : Error("side_undefined", msg), side_(side) {}
    Side side() const noexcept { return side_; }

private:
    Side side_;
};

}  // namespace spcuq
