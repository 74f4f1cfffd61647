#include "fusion_forge/error.hpp"

namespace fusion_forge {

auto to_string(ErrorCode code) -> std::string_view {
    switch (code) {
        case ErrorCode::DuplicateDocument: return "DuplicateDocument";
        case ErrorCode::NonFiniteScore: return "NonFiniteScore";
        case ErrorCode::QueryMismatch: return "QueryMismatch";
        case ErrorCode::ZeroNormVector: return "ZeroNormVector";
        case ErrorCode::NearZeroQueryNorm: return "NearZeroQueryNorm";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::DocumentNotInIndex: return "DocumentNotInIndex";
        case ErrorCode::EmptyPool: return "EmptyPool";
        case ErrorCode::PoolMismatch: return "PoolMismatch";
        case ErrorCode::InvalidParameter: return "InvalidParameter";
        case ErrorCode::TooFewQueries: return "TooFewQueries";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

Error::Error(ErrorCode code, const std::string& message, std::size_t line)
    : std::runtime_error(std::string(to_string(code)) + " (line " + std::to_string(line) + "): " + message),
      code_(code),
      line_(line) {}

}  // namespace fusion_forge
