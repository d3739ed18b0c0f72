// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hets {

enum class ErrorCode {
    DomainMismatch,
    ParamMismatch,
    LevelExhausted,
    InvalidRotationStep,
    MissingGaloisKey,
    TooManyValues,
    LevelMismatch,
    ScaleMismatch,
    ScaleOverflow,
    BackendMismatch,
    InvalidParams,
    MissingKey,
    InvalidWorkerCount,
    TooLong,
    ZeroExponent,
    ShapeMismatch,
    EmptyCoeffs,
    ReplicationExhausted,
    LayoutMismatch,
    InvalidOperand,
    ParseError,
    ShapeError,
    BadMagic,
    BadChecksum,
    UnsupportedVersion,
    Truncated,
    Transport,
    IoError,
    ShapeTooLarge,
};

std::string_view error_code_name(ErrorCode code);

/// Parses a name produced by error_code_name. Unknown names map to InvalidOperand.
ErrorCode error_code_from_name(std::string_view name);

/// The single exception type of the library. Every failure carries one code from
/// the taxonomy above so that callers (and the wire Error frame) can match on it.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

}  // namespace hets
