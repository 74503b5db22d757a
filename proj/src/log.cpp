#include "suppress/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace suppress {

namespace {

LogLevel level_from_env() {
  const char* env = std::getenv("SUPPRESS_DETECT_LOG");
  if (!env) return LogLevel::warn;
  const std::string v(env);
  if (v == "debug") return LogLevel::debug;
  if (v == "info") return LogLevel::info;
  if (v == "warn") return LogLevel::warn;
  if (v == "error") return LogLevel::error;
  if (v == "off") return LogLevel::off;
  return LogLevel::warn;
}

std::atomic<LogLevel>& level_store() {
  static std::atomic<LogLevel> level{level_from_env()};
  return level;
}

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
    default: return "?";
  }
}

}  // namespace

LogLevel log_level() { return level_store().load(); }
void set_log_level(LogLevel level) { level_store().store(level); }

void log(LogLevel level, const std::string& msg) {
  if (level < log_level() || level == LogLevel::off) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[%s] %s\n", tag(level), msg.c_str());
}

}  // namespace suppress
