#pragma once

#include <spdlog/spdlog.h>

namespace dermapipe {

/// Returns the shared stderr logger. The level is taken from DERMAPIPE_LOG
/// (error|warn|info|debug) the first time this is called; default is warn.
spdlog::logger& logger();

/// Number of warnings emitted through logger() since process start.
std::size_t warning_count() noexcept;

}  // namespace dermapipe
