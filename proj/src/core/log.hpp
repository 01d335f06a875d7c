#pragma once

#include <spdlog/spdlog.h>

namespace protoedit::log {

// Reads PROTOEDIT_LOG (error|info|debug) once and configures the
// process-wide stderr logger. Safe to call repeatedly.
void init_from_env();

std::shared_ptr<spdlog::logger> get();

template <typename... Args>
void info(fmt::format_string<Args...> fmt, Args&&... args) {
  get()->info(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void debug(fmt::format_string<Args...> fmt, Args&&... args) {
  get()->debug(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void error(fmt::format_string<Args...> fmt, Args&&... args) {
  get()->error(fmt, std::forward<Args>(args)...);
}

}  // namespace protoedit::log
