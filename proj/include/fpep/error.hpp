#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpep {

enum class ErrorCode {
    DimensionMismatch,
    InvalidParameter,
    NonFinite,
    SingularMatrix,
    ZeroMass,
    NoBracket,
    PoleHit,
    OutOfDomain,
    ZeroMean,
    ZeroDiagonal,
    DegenerateSpectrum,
    NotConverged,
    NotPowerOfTwo,
    ParseError,
    RaggedRows,
    UnmappableLabel,
    ConfigError,
    BenchConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode c) noexcept {
    switch (c) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::NoBracket: return "NoBracket";
    case ErrorCode::PoleHit: return "PoleHit";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::ZeroMean: return "ZeroMean";
    case ErrorCode::ZeroDiagonal: return "ZeroDiagonal";
    case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::NotPowerOfTwo: return "NotPowerOfTwo";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedRows: return "RaggedRows";
    case ErrorCode::UnmappableLabel: return "UnmappableLabel";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::BenchConfigError: return "BenchConfigError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Library-wide exception. Every failure carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace fpep
