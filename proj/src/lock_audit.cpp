#include "diht/lock_audit.hpp"

#include <atomic>

namespace diht::lock_audit {

namespace {
std::atomic<std::uint64_t> g_acquisitions{0};
std::atomic<std::uint64_t> g_violations{0};
std::atomic<std::uint32_t> g_max_held{0};
#ifdef DIHT_LOCK_AUDIT
thread_local std::uint32_t t_held = 0;
#endif
}  // namespace

#ifdef DIHT_LOCK_AUDIT
void acquired() noexcept {
  const std::uint32_t now = ++t_held;
  g_acquisitions.fetch_add(1, std::memory_order_relaxed);
  if (now > 1) g_violations.fetch_add(1, std::memory_order_relaxed);
  std::uint32_t seen = g_max_held.load(std::memory_order_relaxed);
  while (now > seen && !g_max_held.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
  }
}

void released() noexcept {
  if (t_held == 0) {
    g_violations.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  --t_held;
}

std::uint32_t held() noexcept { return t_held; }
#endif

Report report() noexcept {
  return Report{g_acquisitions.load(std::memory_order_relaxed), g_violations.load(std::memory_order_relaxed),
                g_max_held.load(std::memory_order_relaxed)};
}

void reset() noexcept {
  g_acquisitions.store(0);
  g_violations.store(0);
  g_max_held.store(0);
}

}  // namespace diht::lock_audit
