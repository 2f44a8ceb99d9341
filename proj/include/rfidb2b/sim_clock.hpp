#pragma once

#include <cstdint>
#include <stdexcept>

namespace rfidb2b {

/// Simulated wall clock in milliseconds since the Unix epoch (UTC). Nothing in
/// the library reads real time; every window and timeout is measured here.
class SimClock {
 public:
  explicit SimClock(std::int64_t start_ms = 0) : now_ms_(start_ms) {}

  std::int64_t now_ms() const noexcept { return now_ms_; }
  std::uint32_t now_seconds() const noexcept { return static_cast<std::uint32_t>(now_ms_ / 1000); }

  void advance(std::int64_t delta_ms) {
    if (delta_ms < 0) throw std::invalid_argument("simulated clock cannot run backwards");
    now_ms_ += delta_ms;
  }

  void set(std::int64_t ms) {
    if (ms < now_ms_) throw std::invalid_argument("simulated clock cannot run backwards");
    now_ms_ = ms;
  }

 private:
  std::int64_t now_ms_;
};

}  // namespace rfidb2b
