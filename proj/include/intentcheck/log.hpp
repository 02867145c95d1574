#pragma once

#include <spdlog/spdlog.h>

namespace intentcheck {

/// Routes the default logger to stderr and applies INTENTCHECK_LOG (trace, debug, info, warn,
/// error, off). Defaults to warn. Safe to call more than once.
void configure_logging_from_env();

}  // namespace intentcheck
