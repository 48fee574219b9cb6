#include "dsvm/log.hpp"

#include <atomic>
#include <mutex>

namespace dsvm::log {
namespace {

std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(Level lvl, std::string_view tag, std::string_view msg) {
    if (static_cast<int>(g_level.load()) < static_cast<int>(lvl)) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "[" << tag << "] " << msg << '\n';
}

}  // namespace

Level level() { return g_level.load(); }
void set_level(Level lvl) { g_level.store(lvl); }

void warn(std::string_view msg) { emit(Level::warn, "warn", msg); }
void info(std::string_view msg) { emit(Level::info, "info", msg); }
void debug(std::string_view msg) { emit(Level::debug, "debug", msg); }

}  // namespace dsvm::log
