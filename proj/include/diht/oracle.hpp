#pragma once

// Reference checkers for map behavior. Sequential traces are replayed against
// std::unordered_map; concurrent histories are checked per key against
// regular-register semantics (every find returns a value that some insert
// could still have left in place, or absence that an erase or the initial
// state justifies).

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace diht::oracle {

using Key = std::int64_t;
using Value = std::int64_t;

enum class OpKind : std::uint8_t { insert = 0, find = 1, erase = 2 };

std::string to_string(OpKind kind);

struct TraceOp {
  OpKind kind = OpKind::find;
  Key key = 0;
  Value value = 0;               // insert only
  std::optional<Value> result;   // find only: what the map returned
};

struct Mismatch {
  std::size_t index = 0;
  std::optional<Value> expected;
  std::optional<Value> actual;
};

struct Verdict {
  std::size_t finds_checked = 0;
  std::vector<Mismatch> mismatches;
  bool ok() const noexcept { return mismatches.empty(); }
};

/// Replays `trace` in order against a sequential map and compares every
/// recorded find result.
Verdict replay_sequential(const std::vector<TraceOp>& trace);

/// Runs `trace` through a reference map and fills in each find's result.
void fill_expected(std::vector<TraceOp>& trace);

/// Random trace with the benchmark's ratio order (insert, erase, find).
/// Insert values are the op index, so each write is distinguishable.
std::vector<TraceOp> random_trace(std::size_t n, std::uint64_t key_range, std::uint64_t seed,
                                  double insert_ratio = 0.1, double erase_ratio = 0.1);

/// Logical clock for timestamping concurrent operations.
class HistoryClock {
 public:
  std::uint64_t tick() noexcept { return now_.fetch_add(1, std::memory_order_seq_cst); }

 private:
  std::atomic<std::uint64_t> now_{1};
};

struct Event {
  OpKind kind = OpKind::find;
  Key key = 0;
  Value value = 0;
  std::optional<Value> result;
  std::uint64_t start = 0;  // tick taken before invoking
  std::uint64_t end = 0;    // tick taken after returning
};

struct HistoryVerdict {
  std::size_t events = 0;
  std::size_t finds_checked = 0;
  std::size_t unexplained = 0;
  std::vector<Event> examples;  // first few offenders
  bool ok() const noexcept { return unexplained == 0; }
};

/// Checks a concurrent history against an initially empty map.
HistoryVerdict check_history(std::vector<Event> events);

}  // namespace diht::oracle
