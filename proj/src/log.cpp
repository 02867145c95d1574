#include "intentcheck/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace intentcheck {

void configure_logging_from_env() {
    auto logger = spdlog::get("intentcheck");
    if (!logger) logger = spdlog::stderr_color_mt("intentcheck");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("INTENTCHECK_LOG")) {
        spdlog::set_level(spdlog::level::from_str(env));
    }
}

}  // namespace intentcheck
