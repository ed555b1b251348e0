#pragma once

// Locale-local iteration over a LocalTable. Both variants hold at most one
// ElementList lock at a time and never wait on a lock while holding one:
// lists that are busy are remembered as (parent, idx) and revisited later,
// re-reading the slot since it may have been rehashed or emptied meanwhile.
//
// Visitors run while the visited list is locked; they must not call back
// into the map.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <thread>

#include "diht/backoff.hpp"
#include "diht/ebr.hpp"
#include "diht/hash.hpp"
#include "diht/lock_audit.hpp"
#include "diht/lockfree_queue.hpp"
#include "diht/runtime.hpp"
#include "diht/table.hpp"

namespace diht {

struct IterStats {
  std::atomic<std::uint64_t> visited{0};
  std::atomic<std::uint64_t> lists_visited{0};
  std::atomic<std::uint64_t> deferred{0};       // busy lists postponed
  std::atomic<std::uint64_t> revisits{0};       // deferred entries re-read
  std::atomic<std::uint64_t> pointer_lists{0};  // PointerLists descended into
};

namespace iterate_detail {

struct SlotRef {
  table::PointerList* parent = nullptr;
  std::size_t idx = 0;
};

enum class SlotOutcome { empty, visited, busy, inner };

/// Classifies one slot. ElementLists are visited if their lock is free.
/// For `inner`, `child` receives the PointerList.
template <class K, class V, class F>
SlotOutcome process_slot(table::PointerList& parent, std::size_t idx, F& visit, IterStats& stats,
                         table::PointerList*& child) {
  table::Node* node = parent.bucket(idx).load(std::memory_order_acquire);
  if (node == nullptr) return SlotOutcome::empty;
  LockState state = node->lock.load(std::memory_order_acquire);
  if (state == LockState::p_inner) {
    child = static_cast<table::PointerList*>(node);
    return SlotOutcome::inner;
  }
  if (state == LockState::garbage) return SlotOutcome::empty;
  if (state != LockState::e_avail ||
      !node->lock.compare_exchange_strong(state, LockState::e_lock, std::memory_order_acquire,
                                          std::memory_order_relaxed))
    return SlotOutcome::busy;
  lock_audit::acquired();
  auto* list = static_cast<table::ElementList<K, V>*>(node);
  const std::size_t n = list->count();
  for (std::size_t i = 0; i < n; ++i) visit(list->keys[i], list->values[i]);
  list->lock.store(LockState::e_avail, std::memory_order_release);
  lock_audit::released();
  stats.visited.fetch_add(n, std::memory_order_relaxed);
  stats.lists_visited.fetch_add(1, std::memory_order_relaxed);
  return SlotOutcome::visited;
}

template <class K, class V, class F>
void serial_sweep(table::PointerList& plist, ebr::Token& tok, SplitMixStream& rng, F& visit, IterStats& stats,
                  std::deque<SlotRef>& lazy) {
  const std::size_t size = plist.size();
  const std::size_t start = rng.below(size);
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t idx = (start + i) % size;
    table::PointerList* child = nullptr;
    SlotOutcome outcome;
    {
      ebr::PinGuard pin(tok);
      outcome = process_slot<K, V>(plist, idx, visit, stats, child);
    }
    if (outcome == SlotOutcome::inner) {
      stats.pointer_lists.fetch_add(1, std::memory_order_relaxed);
      serial_sweep<K, V>(*child, tok, rng, visit, stats, lazy);
    } else if (outcome == SlotOutcome::busy) {
      stats.deferred.fetch_add(1, std::memory_order_relaxed);
      lazy.push_back({&plist, idx});
    }
  }
}

}  // namespace iterate_detail

/// Visits every element of `table` from one task: a randomized cyclic sweep
/// of each PointerList followed by revisiting the lazy list of busy lists.
template <class K, class V, class H, class F>
void serial_iterate_local(LocalTable<K, V, H>& table, ebr::Token& tok, SplitMixStream& rng, F&& visit,
                          IterStats& stats) {
  using namespace iterate_detail;
  std::deque<SlotRef> lazy;
  serial_sweep<K, V>(table.root(), tok, rng, visit, stats, lazy);
  Backoff backoff;
  while (!lazy.empty()) {
    SlotRef ref = lazy.front();
    lazy.pop_front();
    stats.revisits.fetch_add(1, std::memory_order_relaxed);
    table::PointerList* child = nullptr;
    SlotOutcome outcome;
    {
      ebr::PinGuard pin(tok);
      outcome = process_slot<K, V>(*ref.parent, ref.idx, visit, stats, child);
    }
    if (outcome == SlotOutcome::inner) {
      stats.pointer_lists.fetch_add(1, std::memory_order_relaxed);
      serial_sweep<K, V>(*child, tok, rng, visit, stats, lazy);
    } else if (outcome == SlotOutcome::busy) {
      lazy.push_back(ref);
      backoff();
      continue;
    }
    backoff.reset();
  }
}

/// Parallel variant for one locale: a serial root sweep seeds a WorkList of
/// PointerLists and a DeferList of busy slots, then `workers` tasks drain
/// both. Must be called from a task thread of the table's locale.
template <class K, class V, class H, class F>
void parallel_iterate_local(runtime::Cluster& cluster, LocalTable<K, V, H>& table, ebr::EpochManager& manager,
                            SplitMixStream& rng, std::size_t workers, F&& visit, IterStats& stats) {
  using namespace iterate_detail;
  LockFreeQueue<table::PointerList*> work(manager);
  LockFreeQueue<SlotRef> deferred(manager);
  // Items enqueued but not yet fully processed. Workers leave only once it
  // reaches zero; an empty queue alone may just mean a peer is mid-item.
  std::atomic<std::int64_t> in_flight{0};

  auto classify = [&](table::PointerList& plist, ebr::Token& tok) {
    const std::size_t size = plist.size();
    const std::size_t start = rng.below(size);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t idx = (start + i) % size;
      table::PointerList* child = nullptr;
      SlotOutcome outcome;
      {
        ebr::PinGuard pin(tok);
        outcome = process_slot<K, V>(plist, idx, visit, stats, child);
      }
      if (outcome == SlotOutcome::inner) {
        in_flight.fetch_add(1, std::memory_order_acq_rel);
        work.enqueue(child, tok);
      } else if (outcome == SlotOutcome::busy) {
        stats.deferred.fetch_add(1, std::memory_order_relaxed);
        in_flight.fetch_add(1, std::memory_order_acq_rel);
        deferred.enqueue(SlotRef{&plist, idx}, tok);
      }
    }
  };

  {
    ebr::Token tok = manager.get_token();
    classify(table.root(), tok);
  }

  cluster.coforall_tasks(runtime::here(), workers, [&](std::size_t) {
    ebr::Token tok = manager.get_token();
    Backoff idle;
    for (;;) {
      if (auto plist = work.dequeue(tok)) {
        stats.pointer_lists.fetch_add(1, std::memory_order_relaxed);
        classify(**plist, tok);
        in_flight.fetch_sub(1, std::memory_order_acq_rel);
        idle.reset();
        continue;
      }
      if (auto ref = deferred.dequeue(tok)) {
        stats.revisits.fetch_add(1, std::memory_order_relaxed);
        table::PointerList* child = nullptr;
        SlotOutcome outcome;
        {
          ebr::PinGuard pin(tok);
          outcome = process_slot<K, V>(*ref->parent, ref->idx, visit, stats, child);
        }
        if (outcome == SlotOutcome::inner) {
          work.enqueue(child, tok);  // in-flight count carries over
        } else if (outcome == SlotOutcome::busy) {
          deferred.enqueue(*ref, tok);
          std::this_thread::yield();
        } else {
          in_flight.fetch_sub(1, std::memory_order_acq_rel);
        }
        continue;
      }
      if (in_flight.load(std::memory_order_acquire) == 0) break;
      idle();
    }
  });
}

}  // namespace diht
