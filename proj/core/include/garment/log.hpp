#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace garment::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Level comes from GA_LOG_LEVEL (error|warn|info|debug); default warn.
inline Level threshold() {
    static Level cached = [] {
        const char* env = std::getenv("GA_LOG_LEVEL");
        if (!env) return Level::warn;
        if (std::strcmp(env, "error") == 0) return Level::error;
        if (std::strcmp(env, "warn") == 0) return Level::warn;
        if (std::strcmp(env, "info") == 0) return Level::info;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        return Level::warn;
    }();
    return cached;
}

inline void write(Level lvl, const std::string& msg) {
    if (lvl > threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[%s] %s\n", names[int(lvl)], msg.c_str());
}

inline void error(const std::string& m) { write(Level::error, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void debug(const std::string& m) { write(Level::debug, m); }

}  // namespace garment::log
