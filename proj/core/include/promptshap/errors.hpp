#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace promptshap {

/// Failure domains, one per CLI exit code.
enum class ErrorKind { Config, Oracle, Estimation, Io };

/// All library errors carry a stable machine-readable code (e.g.
/// "DuplicateFieldName") next to the human-readable message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

/// CLI exit-code map: 0 success, 2 usage/config, 3 oracle, 4 estimation, 5 I/O.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return 2;
        case ErrorKind::Oracle: return 3;
        case ErrorKind::Estimation: return 4;
        case ErrorKind::Io: return 5;
    }
    return 1;
}

}  // namespace promptshap
