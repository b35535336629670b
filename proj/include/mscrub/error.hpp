#pragma once

#include <stdexcept>
#include <string>

namespace mscrub {

enum class ErrorCode {
    InvalidInput,
    ShapeMismatch,
    NotPSD,
    DegenerateClass,
    Unsupported,
    UnknownVersion,
    MalformedFile,
    DataFormat,
    Io,
};

[[nodiscard]] inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::UnknownVersion: return "UnknownVersion";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::DataFormat: return "DataFormat";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Library-wide exception. Every failure raised by mscrub carries a code so
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
    if (!condition) {
        throw Error(code, what);
    }
}

} // namespace mscrub
