// SPDX-License-Identifier: Apache-2.0
#include "hets/error.hpp"

#include <array>
#include <utility>

namespace hets {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 29> kNames{{
    {ErrorCode::DomainMismatch, "DomainMismatch"},
    {ErrorCode::ParamMismatch, "ParamMismatch"},
    {ErrorCode::LevelExhausted, "LevelExhausted"},
    {ErrorCode::InvalidRotationStep, "InvalidRotationStep"},
    {ErrorCode::MissingGaloisKey, "MissingGaloisKey"},
    {ErrorCode::TooManyValues, "TooManyValues"},
    {ErrorCode::LevelMismatch, "LevelMismatch"},
    {ErrorCode::ScaleMismatch, "ScaleMismatch"},
    {ErrorCode::ScaleOverflow, "ScaleOverflow"},
    {ErrorCode::BackendMismatch, "BackendMismatch"},
    {ErrorCode::InvalidParams, "InvalidParams"},
    {ErrorCode::MissingKey, "MissingKey"},
    {ErrorCode::InvalidWorkerCount, "InvalidWorkerCount"},
    {ErrorCode::TooLong, "TooLong"},
    {ErrorCode::ZeroExponent, "ZeroExponent"},
    {ErrorCode::ShapeMismatch, "ShapeMismatch"},
    {ErrorCode::EmptyCoeffs, "EmptyCoeffs"},
    {ErrorCode::ReplicationExhausted, "ReplicationExhausted"},
    {ErrorCode::LayoutMismatch, "LayoutMismatch"},
    {ErrorCode::InvalidOperand, "InvalidOperand"},
    {ErrorCode::ParseError, "ParseError"},
    {ErrorCode::ShapeError, "ShapeError"},
    {ErrorCode::BadMagic, "BadMagic"},
    {ErrorCode::BadChecksum, "BadChecksum"},
    {ErrorCode::UnsupportedVersion, "UnsupportedVersion"},
    {ErrorCode::Truncated, "Truncated"},
    {ErrorCode::Transport, "Transport"},
    {ErrorCode::IoError, "IoError"},
    {ErrorCode::ShapeTooLarge, "ShapeTooLarge"},
}};

}  // namespace

std::string_view error_code_name(ErrorCode code) {
    for (const auto& [c, name] : kNames) {
        if (c == code) {
            return name;
        }
    }
    return "Unknown";
}

ErrorCode error_code_from_name(std::string_view name) {
    for (const auto& [c, n] : kNames) {
        if (n == name) {
            return c;
        }
    }
    return ErrorCode::InvalidOperand;
}

}  // namespace hets
