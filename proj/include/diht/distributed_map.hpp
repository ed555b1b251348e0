#pragma once

// Global-view distributed map. The handle is a small copyable value holding a
// privatization id; every locale owns one MapInstance (table, aggregation
// buffers, counters) and a key lives on the locale owning its root slot.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "diht/aggregate.hpp"
#include "diht/config.hpp"
#include "diht/ebr.hpp"
#include "diht/hash.hpp"
#include "diht/iterate.hpp"
#include "diht/map_future.hpp"
#include "diht/runtime.hpp"
#include "diht/table.hpp"

namespace diht {

struct MapCounters {
  std::atomic<std::uint64_t> local_ops{0};   // ops issued here and executed without dispatch
  std::atomic<std::uint64_t> remote_ops{0};  // sync ops dispatched to another locale
  std::atomic<std::uint64_t> records_enqueued{0};
  std::atomic<std::uint64_t> records_executed{0};
  std::atomic<std::uint64_t> buffers_flushed{0};
  std::atomic<std::uint64_t> buffers_with_finds{0};
  std::atomic<std::uint64_t> dispatch_violations{0};
  std::atomic<std::uint64_t> flush_dispatches{0};
  std::atomic<std::uint64_t> max_flush_dispatches{0};
  std::atomic<std::uint64_t> misplaced_ops{0};  // local routine run off its owning locale
};

/// Cluster-wide sum of MapCounters.
struct MapStats {
  std::uint64_t local_ops = 0;
  std::uint64_t remote_ops = 0;
  std::uint64_t records_enqueued = 0;
  std::uint64_t records_executed = 0;
  std::uint64_t buffers_flushed = 0;
  std::uint64_t buffers_with_finds = 0;
  std::uint64_t dispatch_violations = 0;
  std::uint64_t flush_dispatches = 0;
  std::uint64_t max_flush_dispatches = 0;
  std::uint64_t misplaced_ops = 0;
};

template <class K, class V, class Hash = SeededHash<K>>
class MapInstance {
 public:
  MapInstance(const MapConfig& config, runtime::LocaleId locale, std::size_t num_locales,
              std::shared_ptr<ebr::EpochManager> manager, const Hash& hash)
      : manager(std::move(manager)),
        table(config, locale, num_locales, hash),
        aggregator(num_locales, config.buffer_size),
        iter_rng(mix64(config.root_seed ^ (std::uint64_t{locale} << 32) ^ 0x17e7ULL)) {}

  std::shared_ptr<ebr::EpochManager> manager;
  LocalTable<K, V, Hash> table;
  Aggregator<K, V> aggregator;
  SplitMixStream iter_rng;
  MapCounters counters;
  IterStats iter_stats;
};

template <class K, class V, class Hash = SeededHash<K>>
class DistributedMap {
 public:
  using Instance = MapInstance<K, V, Hash>;

  explicit DistributedMap(runtime::Cluster& cluster, MapConfig config = {}, Hash hash = Hash{})
      : cluster_(&cluster), config_(config), dist_(cluster.num_locales(), config.root_buckets_per_locale),
        hash_(hash) {
    config_.validate();
    auto manager = std::make_shared<ebr::EpochManager>(cluster.num_locales());
    const std::size_t n = cluster.num_locales();
    pid_ = cluster.privatize<Instance>([&](runtime::LocaleId loc) {
      return std::make_shared<Instance>(config_, loc, n, manager, hash_);
    });
    owner_ = std::make_shared<Owner>(view());
  }

  runtime::Cluster& cluster() const noexcept { return *cluster_; }
  runtime::Pid pid() const noexcept { return pid_; }
  const MapConfig& config() const noexcept { return config_; }
  const runtime::BlockDistribution& distribution() const noexcept { return dist_; }

  Instance& instance(runtime::LocaleId loc) const { return cluster_->privatized<Instance>(pid_, loc); }
  ebr::EpochManager& epoch_manager() const { return *instance(0).manager; }

  /// Registers a token on the calling locale.
  ebr::Token get_token() const { return instance(runtime::here()).manager->get_token(); }

  std::size_t get_idx(const K& key) const noexcept {
    return static_cast<std::size_t>(hash_(key, config_.root_seed) % dist_.total_slots());
  }
  runtime::LocaleId owner_of(const K& key) const { return dist_.locale_of(get_idx(key)); }

  // -- synchronous operations -------------------------------------------------

  void insert(const K& key, const V& value, ebr::Token& tok) const {
    ebr::PinGuard pin(tok);
    const runtime::LocaleId owner = count_sync(key);
    cluster_->execute_on(owner, [self = view(), owner, key, value, t = &tok] {
      self.local_instance(owner).table.insert_local(key, value, *t);
    });
  }

  std::optional<V> find(const K& key, ebr::Token& tok) const {
    ebr::PinGuard pin(tok);
    const runtime::LocaleId owner = count_sync(key);
    return cluster_->execute_on(owner, [self = view(), owner, key, t = &tok] {
      return self.local_instance(owner).table.find_local(key, *t);
    });
  }

  /// Returns whether the key was present.
  bool erase(const K& key, ebr::Token& tok) const {
    ebr::PinGuard pin(tok);
    const runtime::LocaleId owner = count_sync(key);
    return cluster_->execute_on(owner, [self = view(), owner, key, t = &tok] {
      return self.local_instance(owner).table.erase_local(key, *t);
    });
  }

  // Token-less conveniences.
  void insert(const K& key, const V& value) const {
    auto tok = get_token();
    insert(key, value, tok);
  }
  std::optional<V> find(const K& key) const {
    auto tok = get_token();
    return find(key, tok);
  }
  bool erase(const K& key) const {
    auto tok = get_token();
    return erase(key, tok);
  }

  // -- asynchronous operations ------------------------------------------------
  //
  // Locally owned keys execute immediately. Remote ones are buffered per
  // destination and executed, in no particular order within a buffer, once
  // the buffer fills or is flushed.

  void insert_async(const K& key, const V& value, ebr::Token& tok) const {
    const runtime::LocaleId owner = owner_of(key);
    const runtime::LocaleId self = runtime::here();
    if (owner == self) {
      ebr::PinGuard pin(tok);
      auto& inst = instance(self);
      inst.counters.local_ops.fetch_add(1, std::memory_order_relaxed);
      inst.table.insert_local(key, value, tok);
      return;
    }
    enqueue(owner, OpRecord<K, V>{MapAction::insert, key, value, std::nullopt}, tok);
  }

  MapFuture<V> find_async(const K& key, ebr::Token& tok) const {
    const runtime::LocaleId owner = owner_of(key);
    const runtime::LocaleId self = runtime::here();
    MapFuture<V> future;
    if (owner == self) {
      ebr::PinGuard pin(tok);
      auto& inst = instance(self);
      inst.counters.local_ops.fetch_add(1, std::memory_order_relaxed);
      future.fulfill(inst.table.find_local(key, tok));
      return future;
    }
    enqueue(owner, OpRecord<K, V>{MapAction::find, key, std::nullopt, future}, tok);
    return future;
  }

  void erase_async(const K& key, ebr::Token& tok) const {
    const runtime::LocaleId owner = owner_of(key);
    const runtime::LocaleId self = runtime::here();
    if (owner == self) {
      ebr::PinGuard pin(tok);
      auto& inst = instance(self);
      inst.counters.local_ops.fetch_add(1, std::memory_order_relaxed);
      inst.table.erase_local(key, tok);
      return;
    }
    enqueue(owner, OpRecord<K, V>{MapAction::erase, key, std::nullopt, std::nullopt}, tok);
  }

  /// Drains every buffer of the calling locale and waits until all batches
  /// it has sealed so far are processed. Not for use inside pool tasks.
  void flush_local_buffers() const {
    const runtime::LocaleId self = runtime::here();
    auto& inst = instance(self);
    std::vector<Batch<K, V>> batches;
    {
      auto tok = inst.manager->get_token();
      ebr::PinGuard pin(tok);
      batches = inst.aggregator.seal_all(tok);
    }
    for (auto& b : batches) schedule(self, std::move(b));
    inst.aggregator.wait_idle();
  }

  void flush_all_buffers() const {
    cluster_->coforall_locales([self = view()](runtime::LocaleId) { self.flush_local_buffers(); });
  }

  // -- iteration ---------------------------------------------------------------

  /// Visits all elements, one locale after another.
  template <class F>
  void for_each(F&& visit) const {
    for (runtime::LocaleId loc = 0; loc < cluster_->num_locales(); ++loc) {
      cluster_->execute_on(loc, [self = view(), loc, &visit] {
        auto& inst = self.local_instance(loc);
        auto tok = inst.manager->get_token();
        serial_iterate_local(inst.table, tok, inst.iter_rng, visit, inst.iter_stats);
      });
    }
  }

  /// Visits all elements from tasks_per_locale tasks on every locale at once;
  /// `visit` must be safe to call concurrently.
  template <class F>
  void parallel_for_each(F&& visit) const {
    cluster_->coforall_locales([self = view(), &visit](runtime::LocaleId loc) {
      auto& inst = self.local_instance(loc);
      parallel_iterate_local(*self.cluster_, inst.table, *inst.manager, inst.iter_rng,
                             self.cluster_->tasks_per_locale(), visit, inst.iter_stats);
    });
  }

  std::vector<std::pair<K, V>> collect() const {
    std::mutex mu;
    std::vector<std::pair<K, V>> out;
    parallel_for_each([&](const K& k, const V& v) {
      std::lock_guard lk(mu);
      out.emplace_back(k, v);
    });
    return out;
  }

  // -- introspection -----------------------------------------------------------

  /// Structural census summed over locales; quiescent use only.
  table::Census census() const {
    table::Census total;
    for (runtime::LocaleId loc = 0; loc < cluster_->num_locales(); ++loc) {
      const table::Census c = instance(loc).table.census();
      total.elements += c.elements;
      total.element_lists += c.element_lists;
      total.pointer_lists += c.pointer_lists;
      total.max_depth = std::max(total.max_depth, c.max_depth);
      total.oversized_lists += c.oversized_lists;
      total.locked_lists += c.locked_lists;
      total.empty_lists += c.empty_lists;
    }
    return total;
  }

  std::size_t size() const { return census().elements; }

  MapStats stats() const {
    MapStats s;
    for (runtime::LocaleId loc = 0; loc < cluster_->num_locales(); ++loc) {
      const MapCounters& c = instance(loc).counters;
      s.local_ops += c.local_ops.load();
      s.remote_ops += c.remote_ops.load();
      s.records_enqueued += c.records_enqueued.load();
      s.records_executed += c.records_executed.load();
      s.buffers_flushed += c.buffers_flushed.load();
      s.buffers_with_finds += c.buffers_with_finds.load();
      s.dispatch_violations += c.dispatch_violations.load();
      s.flush_dispatches += c.flush_dispatches.load();
      s.max_flush_dispatches = std::max(s.max_flush_dispatches, c.max_flush_dispatches.load());
      s.misplaced_ops += c.misplaced_ops.load();
    }
    return s;
  }

 private:
  // Unprivatizes when the last owning handle goes away.
  struct Owner;

  DistributedMap() = default;

  /// Copy that does not keep the instances alive; used inside tasks.
  DistributedMap view() const {
    DistributedMap m;
    m.cluster_ = cluster_;
    m.pid_ = pid_;
    m.config_ = config_;
    m.dist_ = dist_;
    m.hash_ = hash_;
    return m;
  }

  /// Instance lookup from inside a routine that must run on `loc`.
  Instance& local_instance(runtime::LocaleId loc) const {
    Instance& inst = instance(loc);
    if (runtime::here() != loc) inst.counters.misplaced_ops.fetch_add(1, std::memory_order_relaxed);
    return inst;
  }

  runtime::LocaleId count_sync(const K& key) const {
    const runtime::LocaleId owner = owner_of(key);
    auto& c = instance(runtime::here()).counters;
    (owner == runtime::here() ? c.local_ops : c.remote_ops).fetch_add(1, std::memory_order_relaxed);
    return owner;
  }

  void enqueue(runtime::LocaleId dest, OpRecord<K, V> rec, ebr::Token& tok) const {
    const runtime::LocaleId self = runtime::here();
    auto& inst = instance(self);
    std::optional<Batch<K, V>> full;
    {
      ebr::PinGuard pin(tok);
      inst.counters.records_enqueued.fetch_add(1, std::memory_order_relaxed);
      full = inst.aggregator.append(dest, std::move(rec), tok);
    }
    if (full) schedule(self, std::move(*full));
  }

  /// "begin emptyBuffer(...)": runs the flush on the source's own pool.
  void schedule(runtime::LocaleId src, Batch<K, V> batch) const {
    cluster_->post(src, [self = view(), src, b = std::move(batch)]() mutable { self.empty_buffer(src, b); });
  }

  void empty_buffer(runtime::LocaleId src, Batch<K, V>& batch) const {
    Instance& src_inst = instance(src);
    runtime::DispatchTally tally;
    const std::size_t n = batch.records.size();
    bool has_finds = false;
    {
      runtime::TallyScope scope(tally);
      std::vector<WireRecord<K, V>> wire;
      wire.reserve(n);
      for (const auto& r : batch.records) {
        has_finds |= r.action == MapAction::find;
        wire.push_back(WireRecord<K, V>{r.action, r.key, r.value});
      }
      const runtime::LocaleId dest = batch.dest;
      auto* records = &batch.records;
      cluster_->execute_on(dest, [self = view(), src, dest, has_finds, records, wire = std::move(wire)] {
        std::vector<FindResult<V>> results = self.empty_buffer_helper(dest, wire, has_finds);
        if (!has_finds) return;
        // Single return trip carrying every find result, positionally.
        self.cluster_->execute_on(src, [self, records, results = std::move(results)] {
          self.resolve_futures(*records, results);
        });
      });
    }
    const std::uint64_t dispatches = tally.remote();
    MapCounters& c = src_inst.counters;
    c.buffers_flushed.fetch_add(1, std::memory_order_relaxed);
    if (has_finds) c.buffers_with_finds.fetch_add(1, std::memory_order_relaxed);
    c.flush_dispatches.fetch_add(dispatches, std::memory_order_relaxed);
    if (dispatches != (has_finds ? 2u : 1u)) c.dispatch_violations.fetch_add(1, std::memory_order_relaxed);
    std::uint64_t seen = c.max_flush_dispatches.load(std::memory_order_relaxed);
    while (dispatches > seen && !c.max_flush_dispatches.compare_exchange_weak(seen, dispatches)) {
    }
    src_inst.aggregator.finish_batch();  // last touch of the instance
  }

  std::vector<FindResult<V>> empty_buffer_helper(runtime::LocaleId dest, const std::vector<WireRecord<K, V>>& wire,
                                                 bool has_finds) const {
    Instance& inst = local_instance(dest);
    std::vector<FindResult<V>> results(has_finds ? wire.size() : 0);
    cluster_->forall(wire.size(), [&](std::size_t begin, std::size_t end) {
      auto tok = inst.manager->get_token();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& r = wire[i];
        ebr::PinGuard pin(tok);
        switch (r.action) {
          case MapAction::insert:
            inst.table.insert_local(r.key, *r.value, tok);
            break;
          case MapAction::erase:
            inst.table.erase_local(r.key, tok);
            break;
          case MapAction::find: {
            std::optional<V> v = inst.table.find_local(r.key, tok);
            results[i] = FindResult<V>{true, v.has_value(), std::move(v)};
            break;
          }
        }
      }
    });
    inst.counters.records_executed.fetch_add(wire.size(), std::memory_order_relaxed);
    return results;
  }

  void resolve_futures(std::vector<OpRecord<K, V>>& records, const std::vector<FindResult<V>>& results) const {
    cluster_->forall(records.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        if (!results[i].is_find) continue;
        records[i].future->fulfill(results[i].success ? results[i].value : std::nullopt);
      }
    });
  }

  runtime::Cluster* cluster_ = nullptr;
  runtime::Pid pid_ = 0;
  MapConfig config_;
  runtime::BlockDistribution dist_{1, 1};
  Hash hash_{};
  std::shared_ptr<Owner> owner_;
};

template <class K, class V, class Hash>
struct DistributedMap<K, V, Hash>::Owner {
  explicit Owner(DistributedMap m) : map(std::move(m)) {}
  ~Owner() {
    try {
      map.flush_all_buffers();
    } catch (...) {
    }
    map.cluster_->unprivatize(map.pid_);
  }
  Owner(const Owner&) = delete;
  Owner& operator=(const Owner&) = delete;

  DistributedMap map;  // non-owning view
};

}  // namespace diht
