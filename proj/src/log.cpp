#include "dermapipe/log.hpp"

#include <atomic>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string_view>

#include <spdlog/sinks/base_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>

namespace dermapipe {
namespace {

std::atomic<std::size_t> g_warnings{0};

class WarningCounter final : public spdlog::sinks::base_sink<std::mutex> {
 protected:
  void sink_it_(const spdlog::details::log_msg& msg) override {
    if (msg.level == spdlog::level::warn) ++g_warnings;
  }
  void flush_() override {}
};

spdlog::level::level_enum level_from_env() {
  const char* env = std::getenv("DERMAPIPE_LOG");
  if (env == nullptr) return spdlog::level::warn;
  const std::string_view v(env);
  if (v == "error") return spdlog::level::err;
  if (v == "info") return spdlog::level::info;
  if (v == "debug") return spdlog::level::debug;
  return spdlog::level::warn;
}

}  // namespace

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    auto counter = std::make_shared<WarningCounter>();
    counter->set_level(spdlog::level::warn);
    auto lg = std::make_shared<spdlog::logger>("dermapipe", spdlog::sinks_init_list{console, counter});
    const auto level = level_from_env();
    console->set_level(level);
    // Warnings are always counted, even when the console is quieter.
    lg->set_level(std::min(level, spdlog::level::warn));
    lg->set_pattern("[%l] %v");
    return lg;
  }();
  return *instance;
}

std::size_t warning_count() noexcept { return g_warnings.load(); }

}  // namespace dermapipe
