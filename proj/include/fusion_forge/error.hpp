#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fusion_forge {

enum class ErrorCode {
    DuplicateDocument,
    NonFiniteScore,
    QueryMismatch,
    ZeroNormVector,
    NearZeroQueryNorm,
    DimensionMismatch,
    DocumentNotInIndex,
    EmptyPool,
    PoolMismatch,
    InvalidParameter,
    TooFewQueries,
    ParseError,
    IoError,
};

auto to_string(ErrorCode code) -> std::string_view;

/// Every failure raised by the library. The code is stable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);
    Error(ErrorCode code, const std::string& message, std::size_t line);

    [[nodiscard]] auto code() const noexcept -> ErrorCode { return code_; }
    /// 1-indexed source line for ParseError raised by the file loaders.
    [[nodiscard]] auto line() const noexcept -> std::optional<std::size_t> { return line_; }

private:
    ErrorCode code_;
    std::optional<std::size_t> line_;
};

}  // namespace fusion_forge
