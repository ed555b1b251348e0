#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "diht/distributed_map.hpp"
#include "diht/iterate.hpp"
#include "diht/lock_audit.hpp"

using diht::DistributedMap;
using diht::IterStats;
using diht::LocalTable;
using diht::LockState;
using diht::MapConfig;
using diht::runtime::Cluster;
using diht::runtime::LocaleId;

namespace {

using Map = DistributedMap<std::int64_t, std::int64_t>;
using Table = LocalTable<std::int64_t, std::int64_t>;

MapConfig small_config() {
  MapConfig c;
  c.root_buckets_per_locale = 64;
  c.inner_base_size = 32;
  c.buffer_size = 256;
  return c;
}

void fill(const Map& m, std::int64_t n) {
  m.cluster().coforall_locales([&](LocaleId loc) {
    auto tok = m.get_token();
    const auto L = static_cast<std::int64_t>(m.cluster().num_locales());
    for (std::int64_t k = loc; k < n; k += L) m.insert_async(k, k * 2, tok);
  });
  m.flush_all_buffers();
}

/// Locks some populated root ElementList on `loc`; returns it.
diht::table::Node* lock_in(const diht::table::PointerList& pl) {
  for (std::size_t i = 0; i < pl.size(); ++i) {
    auto* n = pl.bucket(i).load();
    if (n == nullptr) continue;
    if (n->is_pointer_list()) {
      if (auto* found = lock_in(static_cast<const diht::table::PointerList&>(*n))) return found;
      continue;
    }
    LockState expected = LockState::e_avail;
    if (n->lock.compare_exchange_strong(expected, LockState::e_lock)) return n;
  }
  return nullptr;
}

diht::table::Node* lock_some_list(const Map& m, LocaleId loc) { return lock_in(m.instance(loc).table.root()); }

}  // namespace

TEST(SerialIterate, VisitsEveryKeyOnce) {
  Cluster c(3, 2);
  Map m(c, small_config());
  fill(m, 5000);
  std::multiset<std::int64_t> seen;
  m.for_each([&](const std::int64_t& k, const std::int64_t& v) {
    EXPECT_EQ(v, k * 2);
    seen.insert(k);
  });
  ASSERT_EQ(seen.size(), 5000u);
  std::int64_t expect = 0;
  for (auto k : seen) EXPECT_EQ(k, expect++);
}

TEST(SerialIterate, EmptyMap) {
  Cluster c(2, 1);
  Map m(c, small_config());
  int visits = 0;
  m.for_each([&](const std::int64_t&, const std::int64_t&) { ++visits; });
  EXPECT_EQ(visits, 0);
}

TEST(ParallelIterate, VisitsEveryKeyOnce) {
  Cluster c(3, 4);
  Map m(c, small_config());
  fill(m, 8000);
  std::mutex mu;
  std::multiset<std::int64_t> seen;
  std::atomic<int> visits{0};
  m.parallel_for_each([&](const std::int64_t& k, const std::int64_t&) {
    visits.fetch_add(1);
    std::lock_guard lk(mu);
    seen.insert(k);
  });
  EXPECT_EQ(visits.load(), 8000);
  ASSERT_EQ(seen.size(), 8000u);
  EXPECT_EQ(std::set<std::int64_t>(seen.begin(), seen.end()).size(), 8000u);
}

TEST(ParallelIterate, EmptyMap) {
  Cluster c(2, 3);
  Map m(c, small_config());
  std::atomic<int> visits{0};
  m.parallel_for_each([&](const std::int64_t&, const std::int64_t&) { visits.fetch_add(1); });
  EXPECT_EQ(visits.load(), 0);
}

TEST(ParallelIterate, SingleTaskMatchesSerial) {
  Cluster c(1, 1);
  Map m(c, small_config());
  fill(m, 3000);
  std::set<std::int64_t> a, b;
  m.for_each([&](const std::int64_t& k, const std::int64_t&) { a.insert(k); });
  m.parallel_for_each([&](const std::int64_t& k, const std::int64_t&) { b.insert(k); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 3000u);
}

TEST(ParallelIterate, QueuesStayLocal) {
  Cluster c(4, 3);
  Map m(c, small_config());
  fill(m, 4000);
  const auto before = c.snapshot().remote;
  std::atomic<int> visits{0};
  m.parallel_for_each([&](const std::int64_t&, const std::int64_t&) { visits.fetch_add(1); });
  EXPECT_EQ(visits.load(), 4000);
  // only the per-locale spawns of the coforall
  EXPECT_EQ(c.snapshot().remote - before, 3u);
}

TEST(Iterate, RandomStartDependsOnSeed) {
  diht::ebr::EpochManager mgr;
  Table t(small_config());
  auto tok = mgr.get_token();
  {
    diht::ebr::PinGuard pin(tok);
    for (std::int64_t k = 0; k < 2000; ++k) t.insert_local(k, k, tok);
  }
  auto order = [&](std::uint64_t seed) {
    std::vector<std::int64_t> out;
    diht::SplitMixStream rng(seed);
    IterStats stats;
    diht::serial_iterate_local(t, tok, rng, [&](const std::int64_t& k, const std::int64_t&) { out.push_back(k); },
                               stats);
    return out;
  };
  const auto a = order(1), b = order(2), a2 = order(1);
  EXPECT_EQ(a.size(), 2000u);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, a2);
  EXPECT_EQ(std::set<std::int64_t>(a.begin(), a.end()), std::set<std::int64_t>(b.begin(), b.end()));
}

TEST(SerialIterate, LockedListIsRevisitedAfterRelease) {
  Cluster c(1, 2);
  Map m(c, small_config());
  fill(m, 2000);
  auto* held = lock_some_list(m, 0);
  ASSERT_NE(held, nullptr);
  auto& stats = m.instance(0).iter_stats;
  const auto deferred_before = stats.deferred.load();
  std::atomic<int> visits{0};
  std::thread it([&] { m.for_each([&](const std::int64_t&, const std::int64_t&) { visits.fetch_add(1); }); });
  while (stats.deferred.load() == deferred_before) std::this_thread::yield();
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_LT(visits.load(), 2000);
  held->lock.store(LockState::e_avail);
  it.join();
  EXPECT_EQ(visits.load(), 2000);
  EXPECT_GT(stats.revisits.load(), 0u);
}

TEST(ParallelIterate, LockedListIsRevisitedAfterRelease) {
  Cluster c(2, 3);
  Map m(c, small_config());
  fill(m, 3000);
  auto* held = lock_some_list(m, 1);
  ASSERT_NE(held, nullptr);
  auto& stats = m.instance(1).iter_stats;
  const auto deferred_before = stats.deferred.load();
  std::atomic<int> visits{0};
  std::thread it([&] {
    m.parallel_for_each([&](const std::int64_t&, const std::int64_t&) { visits.fetch_add(1); });
  });
  while (stats.deferred.load() == deferred_before) std::this_thread::yield();
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  held->lock.store(LockState::e_avail);
  it.join();
  EXPECT_EQ(visits.load(), 3000);
}

TEST(Iterate, HoldsOneLockAndToleratesConcurrentMutation) {
  diht::lock_audit::reset();
  Cluster c(2, 3);
  Map m(c, small_config());
  fill(m, 4000);  // stable keys [0, 4000)
  std::atomic<bool> stop{false};
  std::thread mutator([&] {
    diht::runtime::detail::ThreadContextGuard ctx(1, nullptr);
    auto tok = m.get_token();
    std::int64_t i = 0;
    while (!stop.load()) {
      const std::int64_t k = 100000 + (i++ % 3000);
      if (i % 2) {
        m.insert(k, 0, tok);
      } else {
        m.erase(k, tok);
      }
    }
  });
  for (int round = 0; round < 3; ++round) {
    std::mutex mu;
    std::set<std::int64_t> seen;
    m.parallel_for_each([&](const std::int64_t& k, const std::int64_t&) {
      std::lock_guard lk(mu);
      EXPECT_TRUE(seen.insert(k).second);
    });
    for (std::int64_t k = 0; k < 4000; ++k) ASSERT_TRUE(seen.count(k)) << k;
    std::set<std::int64_t> serial_seen;
    m.for_each([&](const std::int64_t& k, const std::int64_t&) { EXPECT_TRUE(serial_seen.insert(k).second); });
    for (std::int64_t k = 0; k < 4000; ++k) ASSERT_TRUE(serial_seen.count(k)) << k;
  }
  stop.store(true);
  mutator.join();
  if (diht::lock_audit::enabled()) {
    EXPECT_EQ(diht::lock_audit::report().violations, 0u);
    EXPECT_LE(diht::lock_audit::report().max_held, 1u);
  }
}
