#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nest {

enum class ErrorKind {
    InvalidDimension,
    Shape,
    Domain,
    EmptyDataset,
    InvalidArgument,
    SingularKernel,
    InvalidBounds,
    Config,
    Bounds,
    Parse,
    Mismatch,
    NotFound,
    Conflict,
    Io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidDimension: return "invalid_dimension";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::EmptyDataset: return "empty_dataset";
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::SingularKernel: return "singular_kernel";
        case ErrorKind::InvalidBounds: return "invalid_bounds";
        case ErrorKind::Config: return "config";
        case ErrorKind::Bounds: return "bounds";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Mismatch: return "mismatch";
        case ErrorKind::NotFound: return "not_found";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

/// A (field, message) pair attached to configuration errors.
using FieldDiagnostic = std::pair<std::string, std::string>;

/// Single exception type for the library; `kind()` distinguishes the cases.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::vector<FieldDiagnostic> fields = {})
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind),
          fields_(std::move(fields)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::vector<FieldDiagnostic>& fields() const noexcept { return fields_; }

private:
    ErrorKind kind_;
    std::vector<FieldDiagnostic> fields_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace nest
