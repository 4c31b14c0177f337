#include "poca/log.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace poca::log {

namespace {

Level from_env() {
    const char* raw = std::getenv("POCA_LOG");
    if (raw == nullptr) return Level::info;
    const std::string_view value(raw);
    if (value == "quiet") return Level::quiet;
    if (value == "warn") return Level::warn;
    if (value == "debug") return Level::debug;
    return Level::info;
}

std::atomic<int>& current() {
    static std::atomic<int> lvl{static_cast<int>(from_env())};
    return lvl;
}

}  // namespace

Level level() { return static_cast<Level>(current().load(std::memory_order_relaxed)); }

void set_level(Level lvl) { current().store(static_cast<int>(lvl), std::memory_order_relaxed); }

}  // namespace poca::log
