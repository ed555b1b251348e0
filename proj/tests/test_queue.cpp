#include <gtest/gtest.h>

#include <atomic>
#include <thread>
#include <vector>

#include "diht/lockfree_queue.hpp"

using diht::LockFreeQueue;
using diht::ebr::EpochManager;

TEST(LockFreeQueue, FifoSingleThread) {
  EpochManager mgr;
  auto tok = mgr.get_token();
  LockFreeQueue<int> q(mgr);
  EXPECT_TRUE(q.empty());
  EXPECT_FALSE(q.dequeue(tok));
  for (int i = 0; i < 100; ++i) q.enqueue(i, tok);
  EXPECT_FALSE(q.empty());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(q.dequeue(tok), i);
  EXPECT_FALSE(q.dequeue(tok));
  EXPECT_EQ(q.enqueued(), 100u);
  EXPECT_EQ(q.dequeued(), 100u);
}

TEST(LockFreeQueue, SentinelsAreReclaimed) {
  EpochManager mgr;
  {
    auto tok = mgr.get_token();
    LockFreeQueue<int> q(mgr);
    for (int i = 0; i < 1000; ++i) q.enqueue(i, tok);
    for (int i = 0; i < 1000; ++i) q.dequeue(tok);
  }
  for (int i = 0; i < 3; ++i) mgr.try_advance();
  EXPECT_EQ(mgr.retired(), 1000u);
  EXPECT_EQ(mgr.reclaimed(), 1000u);
}

TEST(LockFreeQueue, MpmcPerProducerOrder) {
  EpochManager mgr;
  LockFreeQueue<std::pair<int, int>> q(mgr);
  const int producers = 4, per = 20000;
  std::atomic<int> done{0};
  std::vector<std::thread> ts;
  std::vector<std::vector<std::pair<int, int>>> got(4);
  for (int p = 0; p < producers; ++p) {
    ts.emplace_back([&, p] {
      auto tok = mgr.get_token();
      for (int i = 0; i < per; ++i) q.enqueue({p, i}, tok);
      done.fetch_add(1);
    });
  }
  for (int c = 0; c < 4; ++c) {
    ts.emplace_back([&, c] {
      auto tok = mgr.get_token();
      for (;;) {
        if (auto v = q.dequeue(tok)) {
          got[c].push_back(*v);
        } else if (done.load() == producers && q.empty()) {
          break;
        } else {
          std::this_thread::yield();
        }
      }
    });
  }
  for (auto& t : ts) t.join();
  std::size_t total = 0;
  for (auto& g : got) {
    total += g.size();
    std::vector<int> last(producers, -1);
    for (auto [p, i] : g) {
      EXPECT_GT(i, last[p]);  // each consumer sees a producer's items in order
      last[p] = i;
    }
  }
  EXPECT_EQ(total, static_cast<std::size_t>(producers * per));
}
