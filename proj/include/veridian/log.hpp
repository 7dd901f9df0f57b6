#pragma once

#include <string_view>

namespace veridian::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

// Reads VERIDIAN_LOG (quiet|info|debug); unset or unknown means info.
Level level_from_env();
void set_level(Level level);
Level level();

// Thread-safe, one line per call, to stderr.
void info(std::string_view message);
void debug(std::string_view message);

} // namespace veridian::log
