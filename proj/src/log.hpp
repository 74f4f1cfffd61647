#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace fusion_forge {

/// Shared stderr logger. Level comes from FUSION_FORGE_LOG (trace, debug,
/// info, warn, error, off); default is warn.
auto logger() -> spdlog::logger&;

}  // namespace fusion_forge
