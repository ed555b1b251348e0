#pragma once

// Per-thread count of held ElementList locks. Enabled with DIHT_LOCK_AUDIT;
// every acquisition that would make a task hold two locks is recorded as a
// violation.

#include <cstdint>

namespace diht::lock_audit {

struct Report {
  std::uint64_t acquisitions = 0;
  std::uint64_t violations = 0;
  std::uint32_t max_held = 0;
};

#ifdef DIHT_LOCK_AUDIT
void acquired() noexcept;
void released() noexcept;
std::uint32_t held() noexcept;
#else
inline void acquired() noexcept {}
inline void released() noexcept {}
inline std::uint32_t held() noexcept { return 0; }
#endif

constexpr bool enabled() noexcept {
#ifdef DIHT_LOCK_AUDIT
  return true;
#else
  return false;
#endif
}

Report report() noexcept;
void reset() noexcept;

}  // namespace diht::lock_audit
