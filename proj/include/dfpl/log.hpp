#pragma once

#include <string_view>

namespace dfpl {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

/// Messages below this level are dropped. Defaults to kWarn, or the value of
/// DFPL_LOG (debug|info|warn|error|off) when set.
void set_log_level(LogLevel level);
LogLevel log_level();

void log_message(LogLevel level, std::string_view msg);

inline void log_debug(std::string_view msg) { log_message(LogLevel::kDebug, msg); }
inline void log_info(std::string_view msg) { log_message(LogLevel::kInfo, msg); }
inline void log_warn(std::string_view msg) { log_message(LogLevel::kWarn, msg); }

}  // namespace dfpl
