#include "veridian/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace veridian::log {

namespace {

std::atomic<Level> g_level{level_from_env()};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view message) {
    const std::lock_guard lock(g_mutex);
    std::cerr << "[" << tag << "] " << message << '\n';
}

} // namespace

Level level_from_env() {
    const char* raw = std::getenv("VERIDIAN_LOG");
    if (raw == nullptr) {
        return Level::info;
    }
    const std::string value(raw);
    if (value == "quiet") return Level::quiet;
    if (value == "debug") return Level::debug;
    return Level::info;
}

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void info(std::string_view message) {
    if (g_level.load() >= Level::info) {
        emit("info", message);
    }
}

void debug(std::string_view message) {
    if (g_level.load() >= Level::debug) {
        emit("debug", message);
    }
}

} // namespace veridian::log
