#pragma once

// Michael-Scott MPMC queue. Dequeued sentinels are reclaimed through the
// epoch manager, so a node is never freed while another task can still read
// its `next` pointer.

#include <atomic>
#include <cstdint>
#include <optional>
#include <utility>

#include "diht/backoff.hpp"
#include "diht/ebr.hpp"

namespace diht {

template <class T>
class LockFreeQueue {
 public:
  explicit LockFreeQueue(ebr::EpochManager& manager) : manager_(manager) {
    auto* dummy = new QNode;
    head_.store(dummy, std::memory_order_relaxed);
    tail_.store(dummy, std::memory_order_relaxed);
  }

  ~LockFreeQueue() {
    QNode* n = head_.load(std::memory_order_relaxed);
    while (n != nullptr) {
      QNode* next = n->next.load(std::memory_order_relaxed);
      delete n;
      n = next;
    }
  }

  LockFreeQueue(const LockFreeQueue&) = delete;
  LockFreeQueue& operator=(const LockFreeQueue&) = delete;

  ebr::EpochManager& manager() const noexcept { return manager_; }

  void enqueue(T value, ebr::Token& tok) {
    auto* node = new QNode;
    node->value.emplace(std::move(value));
    ebr::PinGuard pin(tok);
    for (;;) {
      QNode* tail = tail_.load(std::memory_order_acquire);
      QNode* next = tail->next.load(std::memory_order_acquire);
      if (tail != tail_.load(std::memory_order_acquire)) continue;
      if (next != nullptr) {
        tail_.compare_exchange_weak(tail, next, std::memory_order_release, std::memory_order_relaxed);
        continue;
      }
      if (tail->next.compare_exchange_weak(next, node, std::memory_order_release, std::memory_order_relaxed)) {
        tail_.compare_exchange_strong(tail, node, std::memory_order_release, std::memory_order_relaxed);
        enqueued_.fetch_add(1, std::memory_order_relaxed);
        return;
      }
    }
  }

  /// Returns a copy of the front value, or nullopt when the queue is empty.
  std::optional<T> dequeue(ebr::Token& tok) {
    ebr::PinGuard pin(tok);
    for (;;) {
      QNode* head = head_.load(std::memory_order_acquire);
      QNode* tail = tail_.load(std::memory_order_acquire);
      QNode* next = head->next.load(std::memory_order_acquire);
      if (head != head_.load(std::memory_order_acquire)) continue;
      if (next == nullptr) return std::nullopt;
      if (head == tail) {
        tail_.compare_exchange_weak(tail, next, std::memory_order_release, std::memory_order_relaxed);
        continue;
      }
      T value = *next->value;
      if (head_.compare_exchange_weak(head, next, std::memory_order_seq_cst, std::memory_order_relaxed)) {
        dequeued_.fetch_add(1, std::memory_order_relaxed);
        tok.defer_delete(head);
        return value;
      }
    }
  }

  bool empty() const noexcept {
    QNode* head = head_.load(std::memory_order_acquire);
    return head->next.load(std::memory_order_acquire) == nullptr;
  }

  std::uint64_t enqueued() const noexcept { return enqueued_.load(std::memory_order_relaxed); }
  std::uint64_t dequeued() const noexcept { return dequeued_.load(std::memory_order_relaxed); }

 private:
  struct QNode final : ebr::Retirable {
    std::optional<T> value;
    std::atomic<QNode*> next{nullptr};
  };

  ebr::EpochManager& manager_;
  alignas(64) std::atomic<QNode*> head_;
  alignas(64) std::atomic<QNode*> tail_;
  std::atomic<std::uint64_t> enqueued_{0};
  std::atomic<std::uint64_t> dequeued_{0};
};

}  // namespace diht
