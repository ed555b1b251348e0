#pragma once

// Node-local interlocked hash table: a fixed-depth tree of PointerLists with
// ElementList leaves. Every operation takes at most one ElementList lock;
// PointerLists are never locked and, once installed, never replaced.

#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "diht/backoff.hpp"
#include "diht/config.hpp"
#include "diht/ebr.hpp"
#include "diht/hash.hpp"
#include "diht/lock_audit.hpp"
#include "diht/runtime.hpp"

namespace diht {

enum class LockState : std::uint32_t {
  e_avail = 0,  // unlocked ElementList
  e_lock = 1,   // locked ElementList
  p_inner = 2,  // PointerList
  garbage = 3,  // ElementList retired to the epoch manager
};

namespace table {

class PointerList;

class Node : public ebr::Retirable {
 public:
  std::atomic<LockState> lock;
  PointerList* const parent;

  bool is_pointer_list() const noexcept { return lock.load(std::memory_order_acquire) == LockState::p_inner; }

 protected:
  Node(LockState initial, PointerList* parent_list) noexcept : lock(initial), parent(parent_list) {}
};

class PointerList final : public Node {
 public:
  PointerList(PointerList* parent_list, std::uint64_t seed, std::size_t size, std::size_t depth)
      : Node(LockState::p_inner, parent_list),
        seed_(seed),
        depth_(depth),
        size_(size),
        buckets_(std::make_unique<std::atomic<Node*>[]>(size)) {
    for (std::size_t i = 0; i < size_; ++i) buckets_[i].store(nullptr, std::memory_order_relaxed);
  }

  // Only reached at teardown; PointerLists are never retired.
  ~PointerList() override {
    for (std::size_t i = 0; i < size_; ++i) delete buckets_[i].load(std::memory_order_relaxed);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t depth() const noexcept { return depth_; }
  std::size_t size() const noexcept { return size_; }
  std::atomic<Node*>& bucket(std::size_t i) noexcept { return buckets_[i]; }
  const std::atomic<Node*>& bucket(std::size_t i) const noexcept { return buckets_[i]; }

 private:
  const std::uint64_t seed_;
  const std::size_t depth_;
  const std::size_t size_;
  std::unique_ptr<std::atomic<Node*>[]> buckets_;
};

/// Leaf bucket. keys/values may only be touched by the holder of `lock`.
template <class K, class V>
class ElementList final : public Node {
 public:
  ElementList(PointerList* parent_list, std::size_t capacity, LockState initial)
      : Node(initial, parent_list), capacity_(capacity) {
    keys.reserve(capacity);
    values.reserve(capacity);
  }

  std::size_t count() const noexcept { return keys.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool full() const noexcept { return keys.size() >= capacity_; }

  void grow() {
    capacity_ *= 2;
    keys.reserve(capacity_);
    values.reserve(capacity_);
  }

  std::vector<K> keys;
  std::vector<V> values;

 private:
  std::size_t capacity_;
};

struct Census {
  std::size_t elements = 0;
  std::size_t element_lists = 0;
  std::size_t pointer_lists = 0;  // below the root
  std::size_t max_depth = 0;      // deepest PointerList
  std::size_t oversized_lists = 0;
  std::size_t locked_lists = 0;
  std::size_t empty_lists = 0;
};

}  // namespace table

template <class K, class V, class Hash = SeededHash<K>>
class LocalTable {
 public:
  using ElementList = table::ElementList<K, V>;
  using Node = table::Node;
  using PointerList = table::PointerList;

  /// A locked ElementList together with the slot that references it.
  struct Locked {
    ElementList* list = nullptr;
    std::atomic<Node*>* slot = nullptr;
    explicit operator bool() const noexcept { return list != nullptr; }
  };

  explicit LocalTable(const MapConfig& config, runtime::LocaleId locale = 0, std::size_t num_locales = 1,
                      Hash hash = Hash{})
      : config_(config),
        locale_(locale),
        dist_(num_locales, config.root_buckets_per_locale),
        hash_(std::move(hash)),
        seed_rng_(config.root_seed ^ locale),
        root_(std::make_unique<PointerList>(nullptr, config.root_seed, config.root_buckets_per_locale, 0)) {
    config_.validate();
  }

  LocalTable(const LocalTable&) = delete;
  LocalTable& operator=(const LocalTable&) = delete;

  const MapConfig& config() const noexcept { return config_; }
  runtime::LocaleId locale() const noexcept { return locale_; }
  const runtime::BlockDistribution& distribution() const noexcept { return dist_; }
  PointerList& root() noexcept { return *root_; }
  const PointerList& root() const noexcept { return *root_; }

  /// Index of `key` in the cluster-wide root array.
  std::size_t root_index(const K& key) const noexcept {
    return static_cast<std::size_t>(hash_(key, config_.root_seed) % dist_.total_slots());
  }

  bool owns(const K& key) const noexcept { return dist_.locale_of(root_index(key)) == locale_; }

  std::size_t slot_index(const K& key, const PointerList& plist) const noexcept {
    return static_cast<std::size_t>(hash_(key, plist.seed()) % plist.size());
  }

  /// Descends to the ElementList responsible for `key` and locks it.
  /// Returns an empty result only when !is_insert and the path ends in an
  /// empty slot. The caller must release() or retire the returned list.
  Locked get_elist(const K& key, bool is_insert, ebr::Token& tok) {
    assert(tok.pinned());
    assert(owns(key));
    Backoff backoff;
    for (;;) {
      PointerList* plist = root_.get();
      std::size_t idx = dist_.local_index(root_index(key));
      bool retry = false;
      while (!retry) {
        std::atomic<Node*>& slot = plist->bucket(idx);
        Node* node = slot.load(std::memory_order_acquire);

        if (node == nullptr) {
          if (!is_insert) return {};
          auto* fresh = new ElementList(plist, config_.bucket_num_elements, LockState::e_lock);
          Node* expected = nullptr;
          if (slot.compare_exchange_strong(expected, fresh, std::memory_order_seq_cst, std::memory_order_acquire)) {
            lock_audit::acquired();
            return {fresh, &slot};
          }
          fresh->lock.store(LockState::garbage, std::memory_order_relaxed);
          tok.try_reclaim(fresh);
          retry = true;
          continue;
        }

        LockState state = node->lock.load(std::memory_order_acquire);
        if (state == LockState::p_inner) {
          plist = static_cast<PointerList*>(node);
          idx = slot_index(key, *plist);
          continue;
        }
        if (state != LockState::e_avail ||
            !node->lock.compare_exchange_strong(state, LockState::e_lock, std::memory_order_acquire,
                                                std::memory_order_relaxed)) {
          backoff();
          retry = true;
          continue;
        }
        lock_audit::acquired();

        auto* elist = static_cast<ElementList*>(node);
        if (!is_insert || !elist->full()) return {elist, &slot};
        if (plist->depth() >= config_.max_depth) {
          elist->grow();
          return {elist, &slot};
        }

        PointerList* child = rehash(*elist, *plist);
        slot.store(child, std::memory_order_seq_cst);
        elist->lock.store(LockState::garbage, std::memory_order_release);
        lock_audit::released();
        tok.defer_delete(elist);
        plist = child;
        idx = slot_index(key, *plist);
      }
    }
  }

  static void release(ElementList* list) noexcept {
    list->lock.store(LockState::e_avail, std::memory_order_release);
    lock_audit::released();
  }

  void insert_local(const K& key, const V& value, ebr::Token& tok) {
    Locked locked = get_elist(key, true, tok);
    ElementList& list = *locked.list;
    for (std::size_t i = 0; i < list.count(); ++i) {
      if (list.keys[i] == key) {
        list.values[i] = value;
        release(&list);
        return;
      }
    }
    list.keys.push_back(key);
    list.values.push_back(value);
    release(&list);
  }

  std::optional<V> find_local(const K& key, ebr::Token& tok) {
    Locked locked = get_elist(key, false, tok);
    if (!locked) return std::nullopt;
    std::optional<V> result;
    ElementList& list = *locked.list;
    for (std::size_t i = 0; i < list.count(); ++i) {
      if (list.keys[i] == key) {
        result = list.values[i];
        break;
      }
    }
    release(&list);
    return result;
  }

  /// Returns whether `key` was present.
  bool erase_local(const K& key, ebr::Token& tok) {
    Locked locked = get_elist(key, false, tok);
    if (!locked) return false;
    ElementList& list = *locked.list;
    bool erased = false;
    for (std::size_t i = 0; i < list.count(); ++i) {
      if (list.keys[i] == key) {
        // swap with the last element
        list.keys[i] = std::move(list.keys.back());
        list.values[i] = std::move(list.values.back());
        list.keys.pop_back();
        list.values.pop_back();
        erased = true;
        break;
      }
    }
    if (list.count() == 0) {
      Node* expected = &list;
      [[maybe_unused]] const bool unlinked = locked.slot->compare_exchange_strong(expected, nullptr,
                                                                                  std::memory_order_seq_cst);
      assert(unlinked);
      list.lock.store(LockState::garbage, std::memory_order_release);
      lock_audit::released();
      tok.defer_delete(&list);
    } else {
      release(&list);
    }
    return erased;
  }

  /// Structural walk; only meaningful while no operation is running.
  table::Census census() const {
    table::Census c;
    walk(*root_, c);
    return c;
  }

  /// Visits every element; only meaningful while no operation is running.
  template <class F>
  void for_each_quiescent(F&& fn) const {
    visit_quiescent(*root_, fn);
  }

  SplitMixStream& seed_rng() noexcept { return seed_rng_; }

 private:
  PointerList* rehash(ElementList& full, PointerList& parent) {
    const std::size_t depth = parent.depth() + 1;
    auto child = std::make_unique<PointerList>(&parent, seed_rng_.next(), config_.level_size(depth), depth);
    for (std::size_t i = 0; i < full.count(); ++i) {
      std::atomic<Node*>& slot = child->bucket(slot_index(full.keys[i], *child));
      auto* list = static_cast<ElementList*>(slot.load(std::memory_order_relaxed));
      if (list == nullptr) {
        list = new ElementList(child.get(), config_.bucket_num_elements, LockState::e_avail);
        slot.store(list, std::memory_order_relaxed);
      }
      list->keys.push_back(full.keys[i]);
      list->values.push_back(full.values[i]);
    }
    return child.release();
  }

  void walk(const PointerList& plist, table::Census& c) const {
    if (plist.depth() > c.max_depth) c.max_depth = plist.depth();
    for (std::size_t i = 0; i < plist.size(); ++i) {
      const Node* node = plist.bucket(i).load(std::memory_order_acquire);
      if (node == nullptr) continue;
      const LockState state = node->lock.load(std::memory_order_acquire);
      if (state == LockState::p_inner) {
        ++c.pointer_lists;
        walk(static_cast<const PointerList&>(*node), c);
        continue;
      }
      const auto& list = static_cast<const ElementList&>(*node);
      ++c.element_lists;
      c.elements += list.count();
      if (list.count() > config_.bucket_num_elements) ++c.oversized_lists;
      if (list.count() == 0) ++c.empty_lists;
      if (state != LockState::e_avail) ++c.locked_lists;
    }
  }

  template <class F>
  void visit_quiescent(const PointerList& plist, F& fn) const {
    for (std::size_t i = 0; i < plist.size(); ++i) {
      const Node* node = plist.bucket(i).load(std::memory_order_acquire);
      if (node == nullptr) continue;
      if (node->lock.load(std::memory_order_acquire) == LockState::p_inner) {
        visit_quiescent(static_cast<const PointerList&>(*node), fn);
        continue;
      }
      const auto& list = static_cast<const ElementList&>(*node);
      for (std::size_t j = 0; j < list.count(); ++j) fn(list.keys[j], list.values[j]);
    }
  }

  MapConfig config_;
  runtime::LocaleId locale_;
  runtime::BlockDistribution dist_;
  Hash hash_;
  SplitMixStream seed_rng_;
  std::unique_ptr<PointerList> root_;
};

}  // namespace diht
