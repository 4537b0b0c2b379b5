#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rgm {

// Contract violations: bad shapes, invalid arguments, broken preconditions.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// File and serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected in a forward or backward pass.
class NumericError : public ContractError {
 public:
  explicit NumericError(const std::string& msg) : ContractError(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// ---------------------------------------------------------------------------
// Deterministic number formatting (locale-free, shortest round-trip).
// Every float written to a CSV or config goes through these.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline std::string format_float(float v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Logging: RGM_LOG=quiet|info|debug (default info), written to stderr.
// ---------------------------------------------------------------------------

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("RGM_LOG");
    if (env == nullptr) return LogLevel::info;
    std::string_view v(env);
    if (v == "quiet") return LogLevel::quiet;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[rgm] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[rgm:debug] %s\n", msg.c_str());
}

}  // namespace rgm
