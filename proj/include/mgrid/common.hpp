#ifndef MGRID_COMMON_HPP
#define MGRID_COMMON_HPP

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mgrid {

enum class ErrorCode {
  invalid_argument,
  config,
  divergence,
  numeric,
  io,
  internal,
};

/// All library failures surface as Error; the C layer maps ErrorCode to
/// status codes and the CLI maps it to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Error(ErrorCode code, const std::string& what, double sim_time)
      : std::runtime_error(what), code_(code), sim_time_(sim_time) {}

  ErrorCode code() const { return code_; }
  double sim_time() const { return sim_time_; }  // -1 when not time-stamped

 private:
  ErrorCode code_;
  double sim_time_ = -1.0;
};

[[noreturn]] inline void throw_config(const std::string& what) {
  throw Error(ErrorCode::config, what);
}

/// Deterministic RNG. The transforms are written out explicitly so that a
/// given seed produces the same stream on every platform; the standard
/// distribution classes do not guarantee that.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorCode::invalid_argument, "uniform_below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (!is) throw Error(ErrorCode::config, "bad rng state string");
  }

 private:
  std::mt19937_64 eng_;
};

/// Bit-exact double <-> hex text, used by snapshots so that restore/replay
/// reproduces trajectories to the last bit.
std::string double_to_hex(double v);
double double_from_hex(std::string_view s);

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Level comes from the MGRID_LOG environment variable (0-3), default warn.
LogLevel log_level();
void log_msg(LogLevel level, const std::string& msg);

}  // namespace mgrid

#endif
