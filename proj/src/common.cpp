#include "mgrid/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace mgrid {

std::string double_to_hex(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits));
  return std::string(buf);
}

double double_from_hex(std::string_view s) {
  if (s.size() != 16) throw Error(ErrorCode::config, "bad hex double: " + std::string(s));
  std::uint64_t bits = 0;
  for (char c : s) {
    bits <<= 4;
    if (c >= '0' && c <= '9')
      bits |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f')
      bits |= static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F')
      bits |= static_cast<std::uint64_t>(c - 'A' + 10);
    else
      throw Error(ErrorCode::config, "bad hex double: " + std::string(s));
  }
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("MGRID_LOG");
    if (!env) return LogLevel::warn;
    const int v = std::atoi(env);
    if (v <= 0) return LogLevel::error;
    if (v >= 3) return LogLevel::debug;
    return static_cast<LogLevel>(v);
  }();
  return level;
}

void log_msg(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[mgrid %s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

}  // namespace mgrid
