#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cultalign {

enum class ErrorKind {
    MissingQuestion,
    OutOfScale,
    ShapeMismatch,
    FitnessEvaluationFailed,
    TransportError,
    DimMismatch,
    UnparseableAnswer,
    UnknownCountry,
    FormatError,
    ConfigError,
    BackendError,
};

constexpr std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::MissingQuestion: return "MissingQuestion";
    case ErrorKind::OutOfScale: return "OutOfScale";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::FitnessEvaluationFailed: return "FitnessEvaluationFailed";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::UnparseableAnswer: return "UnparseableAnswer";
    case ErrorKind::UnknownCountry: return "UnknownCountry";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BackendError: return "BackendError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a category so callers
/// (the CLI in particular) can map it onto exit codes and diagnostics.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), _kind(kind), _detail(message) {}

    ErrorKind kind() const noexcept { return _kind; }

    /// The message without the category prefix.
    const std::string& detail() const noexcept { return _detail; }

    Error with_context(const std::string& context) const { return Error(_kind, context + ": " + _detail); }

private:
    ErrorKind _kind;
    std::string _detail;
};

} // namespace cultalign
