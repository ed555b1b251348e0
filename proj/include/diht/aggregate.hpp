#pragma once

// Per-source, per-destination aggregation buffers for asynchronous map
// operations. Producers claim slots with a fetch_add; whoever claims the last
// slot seals the buffer, detaches it and hands the records back as a Batch
// for the caller to ship. Buffers are retired through EBR because concurrent
// producers may still be looking at a sealed buffer's claim counter.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "diht/backoff.hpp"
#include "diht/ebr.hpp"
#include "diht/map_future.hpp"
#include "diht/runtime.hpp"

namespace diht {

enum class MapAction : std::uint8_t { insert = 0, find = 1, erase = 2 };

/// Source-side record; the future stays on the source locale.
template <class K, class V>
struct OpRecord {
  MapAction action = MapAction::insert;
  K key{};
  std::optional<V> value;                // insert only
  std::optional<MapFuture<V>> future;    // find only
};

/// What actually travels to the destination.
template <class K, class V>
struct WireRecord {
  MapAction action = MapAction::insert;
  K key{};
  std::optional<V> value;
};

/// Positional result shipped back for buffers containing finds.
template <class V>
struct FindResult {
  bool is_find = false;
  bool success = false;
  std::optional<V> value;
};

template <class K, class V>
struct Batch {
  runtime::LocaleId dest = 0;
  std::vector<OpRecord<K, V>> records;
};

template <class K, class V>
class Aggregator {
 public:
  using Record = OpRecord<K, V>;

  Aggregator(std::size_t num_locales, std::size_t capacity)
      : capacity_(capacity), current_(std::make_unique<std::atomic<Buffer*>[]>(num_locales)),
        num_locales_(num_locales) {
    for (std::size_t i = 0; i < num_locales_; ++i) current_[i].store(nullptr, std::memory_order_relaxed);
  }

  ~Aggregator() {
    for (std::size_t i = 0; i < num_locales_; ++i) delete current_[i].load(std::memory_order_relaxed);
  }

  Aggregator(const Aggregator&) = delete;
  Aggregator& operator=(const Aggregator&) = delete;

  std::size_t capacity() const noexcept { return capacity_; }

  /// Adds `rec` to the buffer for `dest`. Returns the detached batch when
  /// this call filled the buffer. `tok` must be pinned.
  std::optional<Batch<K, V>> append(runtime::LocaleId dest, Record rec, ebr::Token& tok) {
    Backoff backoff;
    for (;;) {
      Buffer* buf = current_[dest].load(std::memory_order_acquire);
      if (buf == nullptr) {
        auto* fresh = new Buffer(capacity_);
        if (!current_[dest].compare_exchange_strong(buf, fresh, std::memory_order_acq_rel,
                                                    std::memory_order_acquire)) {
          delete fresh;  // never published
          continue;
        }
        buf = fresh;
      }
      const std::size_t i = buf->claimed.fetch_add(1, std::memory_order_acq_rel);
      if (i >= capacity_) {
        // Being sealed; the sealer detaches it shortly.
        backoff();
        continue;
      }
      buf->records[i] = std::move(rec);
      buf->written.fetch_add(1, std::memory_order_release);
      if (i + 1 == capacity_) return seal(dest, buf, capacity_, tok);
      return std::nullopt;
    }
  }

  /// Seals every partially filled buffer and returns their batches. Buffers
  /// that another task is already sealing are waited out instead.
  std::vector<Batch<K, V>> seal_all(ebr::Token& tok) {
    std::vector<Batch<K, V>> out;
    for (std::size_t d = 0; d < num_locales_; ++d) {
      Buffer* buf = current_[d].load(std::memory_order_acquire);
      if (buf == nullptr) continue;
      const std::size_t n = buf->claimed.fetch_add(capacity_, std::memory_order_acq_rel);
      if (n >= capacity_) {
        Backoff backoff;
        while (current_[d].load(std::memory_order_acquire) == buf) backoff();
        continue;
      }
      auto batch = seal(static_cast<runtime::LocaleId>(d), buf, n, tok);
      if (!batch.records.empty()) out.push_back(std::move(batch));
    }
    return out;
  }

  /// Outstanding batches that were sealed but not yet fully processed.
  std::int64_t pending() const noexcept { return pending_.load(std::memory_order_acquire); }

  /// Marks one sealed batch as processed.
  void finish_batch() noexcept { pending_.fetch_sub(1, std::memory_order_acq_rel); }

  void wait_idle() const {
    runtime::wait_until([this] { return pending() == 0; });
  }

  /// Records currently sitting in unsealed buffers (racy; for tests).
  std::size_t buffered() const noexcept {
    std::size_t total = 0;
    for (std::size_t d = 0; d < num_locales_; ++d) {
      const Buffer* buf = current_[d].load(std::memory_order_acquire);
      if (buf != nullptr) total += std::min(buf->written.load(std::memory_order_acquire), capacity_);
    }
    return total;
  }

 private:
  struct Buffer final : ebr::Retirable {
    explicit Buffer(std::size_t cap) : records(cap) {}
    std::vector<Record> records;
    std::atomic<std::size_t> claimed{0};
    std::atomic<std::size_t> written{0};
  };

  Batch<K, V> seal(runtime::LocaleId dest, Buffer* buf, std::size_t n, ebr::Token& tok) {
    if (n > 0) pending_.fetch_add(1, std::memory_order_acq_rel);
    current_[dest].store(nullptr, std::memory_order_release);
    Backoff backoff;
    while (buf->written.load(std::memory_order_acquire) < n) backoff();
    Batch<K, V> batch{dest, {}};
    batch.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) batch.records.push_back(std::move(buf->records[i]));
    tok.defer_delete(buf);
    return batch;
  }

  const std::size_t capacity_;
  std::unique_ptr<std::atomic<Buffer*>[]> current_;
  const std::size_t num_locales_;
  std::atomic<std::int64_t> pending_{0};
};

}  // namespace diht
