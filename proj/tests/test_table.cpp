#include <gtest/gtest.h>

#include <atomic>
#include <cstdint>
#include <random>
#include <set>
#include <thread>
#include <unordered_map>
#include <vector>

#include "diht/ebr.hpp"
#include "diht/lock_audit.hpp"
#include "diht/oracle.hpp"
#include "diht/table.hpp"

using diht::LocalTable;
using diht::LockState;
using diht::MapConfig;
using diht::ebr::EpochManager;
using diht::ebr::PinGuard;
using diht::ebr::Token;

namespace {

using Table = LocalTable<std::int64_t, std::int64_t>;
using EList = Table::ElementList;

// Ignores the seed, so colliding keys collide at every level.
struct ConstantHash {
  std::uint64_t operator()(const std::int64_t&, std::uint64_t) const noexcept { return 42; }
};

MapConfig small_config() {
  MapConfig c;
  c.root_buckets_per_locale = 64;
  c.inner_base_size = 16;
  return c;
}

std::size_t root_slot(const Table& t, std::int64_t key) {
  return t.distribution().local_index(t.root_index(key));
}

/// First `n` keys landing in root slot `slot` (search over key space).
std::vector<std::int64_t> keys_in_slot(const Table& t, std::size_t slot, std::size_t n) {
  std::vector<std::int64_t> out;
  for (std::int64_t k = 0; out.size() < n; ++k)
    if (root_slot(t, k) == slot) out.push_back(k);
  return out;
}

struct Fixture : ::testing::Test {
  EpochManager mgr;
  Token tok = mgr.get_token();
};

}  // namespace

using TableTest = Fixture;

TEST_F(TableTest, GetElistOnEmptyTable) {
  Table t(small_config());
  PinGuard pin(tok);
  EXPECT_FALSE(t.get_elist(5, false, tok));
  auto locked = t.get_elist(5, true, tok);
  ASSERT_TRUE(locked);
  EXPECT_EQ(locked.list->lock.load(), LockState::e_lock);
  EXPECT_EQ(locked.slot, &t.root().bucket(root_slot(t, 5)));
  EXPECT_EQ(t.root().bucket(root_slot(t, 5)).load(), locked.list);
  Table::release(locked.list);
  EXPECT_EQ(locked.list->lock.load(), LockState::e_avail);
}

TEST_F(TableTest, InsertFindUpdate) {
  Table t(small_config());
  PinGuard pin(tok);
  EXPECT_FALSE(t.find_local(1, tok));
  t.insert_local(1, 10, tok);
  EXPECT_EQ(t.find_local(1, tok), 10);
  t.insert_local(1, 20, tok);
  EXPECT_EQ(t.find_local(1, tok), 20);
  EXPECT_EQ(t.census().elements, 1u);
}

TEST_F(TableTest, EraseAbsentIsNoop) {
  Table t(small_config());
  PinGuard pin(tok);
  EXPECT_FALSE(t.erase_local(3, tok));
  t.insert_local(4, 1, tok);
  EXPECT_FALSE(t.erase_local(3, tok));
  EXPECT_EQ(t.census().elements, 1u);
}

TEST_F(TableTest, HundredThousandDistinctInserts) {
  Table t(MapConfig{});
  PinGuard pin(tok);
  for (std::int64_t k = 0; k < 100000; ++k) t.insert_local(k, k * 3, tok);
  for (std::int64_t k = 0; k < 100000; ++k) ASSERT_EQ(t.find_local(k, tok), k * 3);
  const auto c = t.census();
  EXPECT_EQ(c.elements, 100000u);
  EXPECT_EQ(c.oversized_lists, 0u);
  EXPECT_EQ(c.locked_lists, 0u);
  EXPECT_GT(c.pointer_lists, 0u);
}

TEST_F(TableTest, SwapDeleteKeepsRemainder) {
  Table t(small_config());
  const auto keys = keys_in_slot(t, 3, 3);
  PinGuard pin(tok);
  for (auto k : keys) t.insert_local(k, k + 100, tok);
  EXPECT_TRUE(t.erase_local(keys[0], tok));
  auto* list = static_cast<EList*>(t.root().bucket(3).load());
  ASSERT_EQ(list->count(), 2u);
  EXPECT_EQ(list->keys[0], keys[2]);  // last element moved into the hole
  EXPECT_EQ(list->keys[1], keys[1]);
  EXPECT_EQ(t.find_local(keys[1], tok), keys[1] + 100);
  EXPECT_EQ(t.find_local(keys[2], tok), keys[2] + 100);
  EXPECT_FALSE(t.find_local(keys[0], tok));
}

TEST_F(TableTest, EmptiedListIsRetiredOnceAndSlotCleared) {
  Table t(small_config());
  const auto keys = keys_in_slot(t, 7, 2);
  {
    PinGuard pin(tok);
    for (auto k : keys) t.insert_local(k, 1, tok);
    const auto retired = mgr.retired();
    t.erase_local(keys[0], tok);
    EXPECT_EQ(mgr.retired(), retired);
    t.erase_local(keys[1], tok);
    EXPECT_EQ(mgr.retired(), retired + 1);
    EXPECT_EQ(t.root().bucket(7).load(), nullptr);
    // A fresh insert into the cleared slot succeeds straight away.
    t.insert_local(keys[1], 2, tok);
    EXPECT_EQ(t.find_local(keys[1], tok), 2);
  }
  for (int i = 0; i < 3; ++i) mgr.try_advance();
  EXPECT_EQ(mgr.retired(), mgr.reclaimed());
}

TEST_F(TableTest, RootCollisionsRehashIntoPointerList) {
  MapConfig cfg = small_config();
  Table t(cfg);
  const auto keys = keys_in_slot(t, 11, cfg.bucket_num_elements + 1);
  {
    PinGuard pin(tok);
    for (auto k : keys) t.insert_local(k, -k, tok);
    auto* node = t.root().bucket(11).load();
    ASSERT_NE(node, nullptr);
    EXPECT_EQ(node->lock.load(), LockState::p_inner);
    auto* plist = static_cast<diht::table::PointerList*>(node);
    EXPECT_EQ(plist->depth(), 1u);
    EXPECT_EQ(plist->size(), cfg.inner_base_size);
    EXPECT_EQ(plist->parent, &t.root());
    for (auto k : keys) EXPECT_EQ(t.find_local(k, tok), -k);
  }
  EXPECT_EQ(mgr.retired(), 1u);  // the full root list
  for (int i = 0; i < 3; ++i) mgr.try_advance();
  EXPECT_EQ(mgr.reclaimed(), 1u);
}

TEST_F(TableTest, ConstantHashReachesMaxDepthThenGrows) {
  MapConfig cfg = small_config();
  cfg.max_depth = 3;
  LocalTable<std::int64_t, std::int64_t, ConstantHash> t(cfg);
  const std::int64_t n = 100;
  {
    PinGuard pin(tok);
    for (std::int64_t k = 0; k < n; ++k) t.insert_local(k, k, tok);
    for (std::int64_t k = 0; k < n; ++k) ASSERT_EQ(t.find_local(k, tok), k);
  }
  const auto c = t.census();
  EXPECT_EQ(c.max_depth, 3u);
  EXPECT_EQ(c.pointer_lists, 3u);
  EXPECT_EQ(c.element_lists, 1u);
  EXPECT_EQ(c.elements, static_cast<std::size_t>(n));
  EXPECT_EQ(c.oversized_lists, 1u);
  EXPECT_EQ(mgr.retired(), 3u);  // one full list per rehash
}

TEST_F(TableTest, MatchesOracleOnRandomTrace) {
  Table t(small_config());
  auto trace = diht::oracle::random_trace(50000, 512, 3);
  {
    PinGuard pin(tok);
    for (auto& op : trace) {
      switch (op.kind) {
        case diht::oracle::OpKind::insert: t.insert_local(op.key, op.value, tok); break;
        case diht::oracle::OpKind::erase: t.erase_local(op.key, tok); break;
        case diht::oracle::OpKind::find: op.result = t.find_local(op.key, tok); break;
      }
    }
  }
  const auto verdict = diht::oracle::replay_sequential(trace);
  EXPECT_TRUE(verdict.ok()) << verdict.mismatches.size() << " mismatches";
  // final key set
  std::unordered_map<std::int64_t, std::int64_t> ref;
  for (const auto& op : trace) {
    if (op.kind == diht::oracle::OpKind::insert) ref[op.key] = op.value;
    if (op.kind == diht::oracle::OpKind::erase) ref.erase(op.key);
  }
  std::unordered_map<std::int64_t, std::int64_t> got;
  t.for_each_quiescent([&](std::int64_t k, std::int64_t v) { EXPECT_TRUE(got.emplace(k, v).second); });
  EXPECT_EQ(got, ref);
}

TEST_F(TableTest, ConcurrentDisjointInsertsLoseNothing) {
  Table t(small_config());
  const int threads = 8, per = 20000;
  std::vector<std::thread> ts;
  for (int w = 0; w < threads; ++w) {
    ts.emplace_back([&, w] {
      Token my = mgr.get_token();
      for (int i = 0; i < per; ++i) {
        PinGuard pin(my);
        t.insert_local(static_cast<std::int64_t>(i) * threads + w, w, my);
      }
    });
  }
  for (auto& th : ts) th.join();
  EXPECT_EQ(t.census().elements, static_cast<std::size_t>(threads * per));
  EXPECT_EQ(t.census().locked_lists, 0u);
  PinGuard pin(tok);
  for (std::int64_t k = 0; k < threads * per; ++k) ASSERT_EQ(t.find_local(k, tok), k % threads);
}

TEST_F(TableTest, StressHoldsSingleLockAndSlotMonotonicity) {
  diht::lock_audit::reset();
  Table t(small_config());
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> slot_changes{0};
  std::thread watcher([&] {
    std::vector<diht::table::Node*> seen(t.root().size(), nullptr);
    while (!stop.load()) {
      for (std::size_t i = 0; i < seen.size(); ++i) {
        auto* n = t.root().bucket(i).load();
        if (seen[i] != nullptr && n != seen[i]) slot_changes.fetch_add(1);
        if (seen[i] == nullptr && n != nullptr && n->lock.load() == LockState::p_inner) seen[i] = n;
      }
      std::this_thread::yield();
    }
  });
  std::vector<std::thread> ts;
  for (int w = 0; w < 8; ++w) {
    ts.emplace_back([&, w] {
      Token my = mgr.get_token();
      std::mt19937_64 rng(w);
      for (int i = 0; i < 30000; ++i) {
        const auto k = static_cast<std::int64_t>(rng() % 4096);
        const auto s = rng() % 10;
        PinGuard pin(my);
        if (s < 4) {
          t.insert_local(k, i, my);
        } else if (s < 7) {
          t.erase_local(k, my);
        } else {
          t.find_local(k, my);
        }
        ASSERT_EQ(diht::lock_audit::held(), 0u);
      }
    });
  }
  for (auto& th : ts) th.join();
  stop.store(true);
  watcher.join();
  EXPECT_EQ(slot_changes.load(), 0u);
  const auto audit = diht::lock_audit::report();
  if (diht::lock_audit::enabled()) {
    EXPECT_GT(audit.acquisitions, 0u);
    EXPECT_EQ(audit.violations, 0u);
    EXPECT_LE(audit.max_held, 1u);
  }
  EXPECT_EQ(t.census().locked_lists, 0u);
  EXPECT_EQ(t.census().empty_lists, 0u);
  for (int i = 0; i < 3; ++i) mgr.try_advance();
  EXPECT_EQ(mgr.retired(), mgr.reclaimed());
}

TEST_F(TableTest, GarbageListForcesRetry) {
  Table t(small_config());
  const auto keys = keys_in_slot(t, 5, 1);
  PinGuard pin(tok);
  t.insert_local(keys[0], 1, tok);
  auto* list = static_cast<EList*>(t.root().bucket(5).load());
  // A descent that raced an erase sees the GARBAGE word; model the window by
  // marking the list and clearing it on another thread shortly after.
  list->lock.store(LockState::garbage);
  std::thread cleaner([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    diht::table::Node* expected = list;
    t.root().bucket(5).compare_exchange_strong(expected, nullptr);
  });
  EXPECT_FALSE(t.find_local(keys[0], tok));  // retried until the slot cleared
  cleaner.join();
  delete list;
}
