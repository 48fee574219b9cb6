#pragma once

#include <iostream>
#include <string_view>

namespace dsvm::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

Level level();
void set_level(Level lvl);

void warn(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

}  // namespace dsvm::log
