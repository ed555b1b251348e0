#pragma once

#include <algorithm>
#include <chrono>
#include <thread>

namespace diht {

/// Yield first, then sleep with exponential growth from 1us up to 64us.
class Backoff {
 public:
  void operator()() {
    if (attempt_ == 0) {
      std::this_thread::yield();
    } else {
      const unsigned us = 1u << std::min(attempt_ - 1, kMaxShift);
      std::this_thread::sleep_for(std::chrono::microseconds(us));
    }
    if (attempt_ <= kMaxShift) ++attempt_;
  }

  void reset() noexcept { attempt_ = 0; }

 private:
  static constexpr unsigned kMaxShift = 6;  // 64us
  unsigned attempt_ = 0;
};

}  // namespace diht
