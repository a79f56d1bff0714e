#pragma once

// Stderr logging gated by the CTFGEN_LOG environment variable: error|info|debug.
// Default level is info. Unknown values fall back to info with a note.

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace ctfgen::log {

enum class Level { error = 0, info = 1, debug = 2 };

inline Level threshold() {
    static const Level lvl = [] {
        const char* env = std::getenv("CTFGEN_LOG");
        if (env == nullptr) return Level::info;
        const std::string s(env);
        if (s == "error") return Level::error;
        if (s == "debug") return Level::debug;
        if (s != "info") {
            std::cerr << "[ctfgen:error] unknown CTFGEN_LOG value '" << s << "', using info\n";
        }
        return Level::info;
    }();
    return lvl;
}

inline void emit(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    static std::mutex mu;
    const char* tag = lvl == Level::error ? "error" : (lvl == Level::info ? "info" : "debug");
    const std::scoped_lock lock(mu);
    std::cerr << "[ctfgen:" << tag << "] " << msg << "\n";
}

inline void error(const std::string& msg) { emit(Level::error, msg); }
inline void info(const std::string& msg) { emit(Level::info, msg); }
inline void debug(const std::string& msg) { emit(Level::debug, msg); }

}  // namespace ctfgen::log
