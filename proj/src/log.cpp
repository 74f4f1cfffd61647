#include "log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace fusion_forge {

auto logger() -> spdlog::logger& {
    static const std::shared_ptr<spdlog::logger> instance = [] {
        auto l = spdlog::stderr_color_mt("fusion_forge");
        l->set_pattern("[%l] %v");
        l->set_level(spdlog::level::warn);
        if (const char* env = std::getenv("FUSION_FORGE_LOG")) {
            l->set_level(spdlog::level::from_str(env));
        }
        return l;
    }();
    return *instance;
}

}  // namespace fusion_forge
