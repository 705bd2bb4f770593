#include "leakbench/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <mutex>

namespace leakbench {

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("LEAKBENCH_LOG");
        if (env == nullptr) return LogLevel::error;
        const std::string_view s(env);
        if (s == "debug") return LogLevel::debug;
        if (s == "info") return LogLevel::info;
        return LogLevel::error;
    }();
    return level;
}

namespace {
std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

void emit(const char* tag, const std::string& msg) {
    std::lock_guard<std::mutex> lock(log_mutex());
    std::cerr << tag << msg << "\n";
}
}  // namespace

void log_error(const std::string& msg) { emit("[error] ", msg); }

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) emit("[info] ", msg);
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::debug) emit("[debug] ", msg);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view bytes) { return fnv1a64(bytes.data(), bytes.size()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, bool& ok) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    ok = res.ec == std::errc{} && res.ptr == s.data() + s.size();
    return v;
}

}  // namespace leakbench
