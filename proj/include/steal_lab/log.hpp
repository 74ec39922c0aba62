#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace steal_lab {

/// Shared stderr logger. The level comes from STEAL_LAB_LOG (error, info or
/// debug; default info).
std::shared_ptr<spdlog::logger> logger();

}  // namespace steal_lab
