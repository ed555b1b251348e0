#pragma once

#include <atomic>
#include <cstdint>
#include <functional>

namespace diht {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// Seeded key hash used at every level of the tree. Different seeds give
/// independent slot choices for the same key.
template <class Key>
struct SeededHash {
  std::uint64_t operator()(const Key& key, std::uint64_t seed) const noexcept {
    const auto h = static_cast<std::uint64_t>(std::hash<Key>{}(key));
    return mix64(h ^ mix64(seed + kGolden));
  }
};

/// Lock-free deterministic random stream (splitmix64 over an atomic counter).
class SplitMixStream {
 public:
  explicit SplitMixStream(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next() noexcept { return mix64(state_.fetch_add(kGolden, std::memory_order_relaxed) + kGolden); }

  /// Uniform value in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept { return next() % bound; }

 private:
  std::atomic<std::uint64_t> state_;
};

}  // namespace diht
