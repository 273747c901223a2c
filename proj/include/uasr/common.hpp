#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace uasr {

// All recoverable failures surface as Error; the CLI maps them to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
std::string format_msg(const char* fmt, Args... args) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return std::string(buf);
}

inline int log_verbosity() {
  static int v = [] {
    const char* e = std::getenv("UASR_LOG");
    return e ? std::atoi(e) : 1;
  }();
  return v;
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  if (log_verbosity() >= 1)
    std::fprintf(stderr, "[uasr] %s\n", format_msg(fmt, args...).c_str());
}

template <typename... Args>
void log_warn(const char* fmt, Args... args) {
  if (log_verbosity() >= 1)
    std::fprintf(stderr, "[uasr] warning: %s\n", format_msg(fmt, args...).c_str());
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_verbosity() >= 2)
    std::fprintf(stderr, "[uasr] debug: %s\n", format_msg(fmt, args...).c_str());
}

#define UASR_REQUIRE(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::uasr::Error(msg);       \
  } while (0)

}  // namespace uasr
