#pragma once

#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace cfs {

using Bytes = std::vector<uint8_t>;
using ByteSpan = std::span<const uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteSpan b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

inline std::string hex_encode(ByteSpan data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline std::optional<Bytes> hex_decode(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = nib(hex[i]), lo = nib(hex[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<uint8_t>(hi << 4 | lo));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Errors

enum class Errc {
    ok = 0,
    not_found,
    exists,
    not_a_directory,
    is_a_directory,
    permission_denied,
    read_only,
    integrity,       // digest / signature / proof mismatch on verified data
    decrypt_failure, // AEAD authenticity failure (distinct from signature failure)
    io,
    conflict,        // write parked after repeated CAS losses
    bad_request,
    invalid_cursor,
    dangling_chain,
    rejected_write,  // server-side admission failure
    unavailable,     // transport / peer unreachable (retryable)
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::ok: return "ok";
        case Errc::not_found: return "not_found";
        case Errc::exists: return "exists";
        case Errc::not_a_directory: return "not_a_directory";
        case Errc::is_a_directory: return "is_a_directory";
        case Errc::permission_denied: return "permission_denied";
        case Errc::read_only: return "read_only";
        case Errc::integrity: return "integrity";
        case Errc::decrypt_failure: return "decrypt_failure";
        case Errc::io: return "io";
        case Errc::conflict: return "conflict";
        case Errc::bad_request: return "bad_request";
        case Errc::invalid_cursor: return "invalid_cursor";
        case Errc::dangling_chain: return "dangling_chain";
        case Errc::rejected_write: return "rejected_write";
        case Errc::unavailable: return "unavailable";
    }
    return "?";
}

struct Error {
    Errc code = Errc::ok;
    std::string message;
};

template <typename T>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}
    Result(Error e) : v_(std::move(e)) {}

    static Result err(Errc c, std::string msg = {}) {
        return Result(Error{c, std::move(msg)});
    }

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    T& value() { return std::get<T>(v_); }
    const T& value() const { return std::get<T>(v_); }
    T&& take() { return std::move(std::get<T>(v_)); }

    const Error& error() const { return std::get<Error>(v_); }
    Errc code() const { return ok() ? Errc::ok : error().code; }

private:
    std::variant<T, Error> v_;
};

// Result<void> stand-in.
struct Unit {};
using Status = Result<Unit>;

inline Status ok_status() { return Status(Unit{}); }

// ---------------------------------------------------------------------------
// Logging: tiny stderr logger, level from CFS_LOG (error|warn|info|debug).

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_threshold() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("CFS_LOG");
        if (!e) return LogLevel::warn;
        std::string s(e);
        if (s == "error") return LogLevel::error;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}

inline void logf(LogLevel lvl, const char* fmt, ...) {
    if (lvl > log_threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[cfs:%s] ", names[static_cast<int>(lvl)]);
    va_list ap;
    va_start(ap, fmt);
    std::vfprintf(stderr, fmt, ap);
    va_end(ap);
    std::fputc('\n', stderr);
}

#define CFS_LOG_ERROR(...) ::cfs::logf(::cfs::LogLevel::error, __VA_ARGS__)
#define CFS_LOG_WARN(...) ::cfs::logf(::cfs::LogLevel::warn, __VA_ARGS__)
#define CFS_LOG_INFO(...) ::cfs::logf(::cfs::LogLevel::info, __VA_ARGS__)
#define CFS_LOG_DEBUG(...) ::cfs::logf(::cfs::LogLevel::debug, __VA_ARGS__)

// ---------------------------------------------------------------------------
// Clocks

inline uint64_t wall_micros() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

inline uint64_t mono_nanos() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

} // namespace cfs
