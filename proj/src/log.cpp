#include "dfpl/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace dfpl {

namespace {

LogLevel level_from_env() {
  const char* v = std::getenv("DFPL_LOG");
  if (v == nullptr) return LogLevel::kWarn;
  const std::string s(v);
  if (s == "debug") return LogLevel::kDebug;
  if (s == "info") return LogLevel::kInfo;
  if (s == "error") return LogLevel::kError;
  if (s == "off") return LogLevel::kOff;
  return LogLevel::kWarn;
}

std::atomic<LogLevel>& current() {
  static std::atomic<LogLevel> level{level_from_env()};
  return level;
}

const char* name(LogLevel l) {
  switch (l) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarn: return "warn";
    case LogLevel::kError: return "error";
    case LogLevel::kOff: break;
  }
  return "";
}

}  // namespace

void set_log_level(LogLevel level) { current().store(level); }
LogLevel log_level() { return current().load(); }

void log_message(LogLevel level, std::string_view msg) {
  if (level < log_level()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::clog << "[dfpl " << name(level) << "] " << msg << '\n';
}

}  // namespace dfpl
