#include "log.hpp"

#include <cstdlib>
#include <mutex>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace protoedit::log {

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto logger = spdlog::stderr_color_mt("protoedit");
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::err;
  if (const char* env = std::getenv("PROTOEDIT_LOG")) {
    std::string_view v(env);
    if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
  }
  logger->set_level(level);
  return logger;
}

}  // namespace

std::shared_ptr<spdlog::logger> get() {
  static std::shared_ptr<spdlog::logger> logger = make_logger();
  return logger;
}

void init_from_env() { (void)get(); }

}  // namespace protoedit::log
