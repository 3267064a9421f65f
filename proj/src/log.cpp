#include "spcuq/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace spcuq {

namespace {

LogLevel parse_level(const char* value) {
    if (!value) return LogLevel::warn;
    std::string v(value);
    if (v == "debug") return LogLevel::debug;
    if (v == "info") return LogLevel::info;
    if (v == "warn") return LogLevel::warn;
    if (v == "error") return LogLevel::error;
    if (v == "off") return LogLevel::off;
    return LogLevel::warn;
}

const char* level_tag(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warn: return "warn";
        default: return "error";
    }
}

std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

LogLevel log_level() {
    static LogLevel level = parse_level(std::getenv("SPCUQ_LOG"));
    return level;
}

void log_message(LogLevel level, const std::string& msg) {
    if (level < log_level()) return;
    std::lock_guard<std::mutex> lock(log_mutex());
    std::cerr << "[spcuq " << level_tag(level) << "] " << msg << "\n";
}

}  // namespace spcuq
