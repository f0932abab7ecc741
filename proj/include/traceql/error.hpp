#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace traceql {

enum class ErrorKind {
    ParseError,
    DuplicateFeature,
    UnknownFeature,
    UnknownClass,
    UnlistedMaskSet,
    RemoteClassifierUnavailable,
    InsufficientClasses,
    SchemaError,
    RangeError,
    IoError,
    NotFound,
    DuplicateSceneId,
    InvalidArgument,
    EmptyMessage,
    AuthError,
    RateLimited,
    TransportError,
    MalformedResponse,
    EmptyTranscript,
    NoCausesInRecord,
    EmptyInput,
    MissingRecord,
    SessionBusy,
    BindError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateFeature: return "DuplicateFeature";
    case ErrorKind::UnknownFeature: return "UnknownFeature";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::UnlistedMaskSet: return "UnlistedMaskSet";
    case ErrorKind::RemoteClassifierUnavailable: return "RemoteClassifierUnavailable";
    case ErrorKind::InsufficientClasses: return "InsufficientClasses";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::DuplicateSceneId: return "DuplicateSceneId";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyMessage: return "EmptyMessage";
    case ErrorKind::AuthError: return "AuthError";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::EmptyTranscript: return "EmptyTranscript";
    case ErrorKind::NoCausesInRecord: return "NoCausesInRecord";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MissingRecord: return "MissingRecord";
    case ErrorKind::SessionBusy: return "SessionBusy";
    case ErrorKind::BindError: return "BindError";
    }
    return "Unknown";
}

/// Every failure raised by the library. The kind is the stable, matchable part;
/// the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
          kind_(kind), detail_(detail) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

/// Parse failure with a 1-based source position.
class ParseError : public Error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& detail)
        : Error(ErrorKind::ParseError,
                "line " + std::to_string(line) + ", column " + std::to_string(column) +
                    ": " + detail),
          line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

}  // namespace traceql
