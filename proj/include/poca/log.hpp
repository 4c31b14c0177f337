#pragma once

#include <fmt/core.h>

#include <cstdio>
#include <utility>

namespace poca::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

// Reads POCA_LOG (quiet|warn|info|debug) once; defaults to info.
Level level();
void set_level(Level level);

template <typename... Args>
void info(fmt::format_string<Args...> format, Args&&... args) {
    if (level() >= Level::info) {
        fmt::print(stderr, "[info] {}\n", fmt::format(format, std::forward<Args>(args)...));
    }
}

template <typename... Args>
void warn(fmt::format_string<Args...> format, Args&&... args) {
    if (level() >= Level::warn) {
        fmt::print(stderr, "[warn] {}\n", fmt::format(format, std::forward<Args>(args)...));
    }
}

template <typename... Args>
void debug(fmt::format_string<Args...> format, Args&&... args) {
    if (level() >= Level::debug) {
        fmt::print(stderr, "[debug] {}\n", fmt::format(format, std::forward<Args>(args)...));
    }
}

}  // namespace poca::log
