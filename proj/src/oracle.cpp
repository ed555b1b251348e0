#include "diht/oracle.hpp"

#include <algorithm>
#include <random>
#include <unordered_map>

namespace diht::oracle {

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::insert:
      return "insert";
    case OpKind::find:
      return "find";
    case OpKind::erase:
      return "erase";
  }
  return "?";
}

namespace {

template <class OnFind>
void run_reference(const std::vector<TraceOp>& trace, OnFind&& on_find) {
  std::unordered_map<Key, Value> ref;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const TraceOp& op = trace[i];
    switch (op.kind) {
      case OpKind::insert:
        ref[op.key] = op.value;
        break;
      case OpKind::erase:
        ref.erase(op.key);
        break;
      case OpKind::find: {
        auto it = ref.find(op.key);
        on_find(i, it == ref.end() ? std::nullopt : std::optional<Value>(it->second));
        break;
      }
    }
  }
}

}  // namespace

Verdict replay_sequential(const std::vector<TraceOp>& trace) {
  Verdict v;
  run_reference(trace, [&](std::size_t i, std::optional<Value> expected) {
    ++v.finds_checked;
    if (trace[i].result != expected) v.mismatches.push_back({i, expected, trace[i].result});
  });
  return v;
}

void fill_expected(std::vector<TraceOp>& trace) {
  run_reference(trace, [&](std::size_t i, std::optional<Value> expected) { trace[i].result = expected; });
}

std::vector<TraceOp> random_trace(std::size_t n, std::uint64_t key_range, std::uint64_t seed, double insert_ratio,
                                  double erase_ratio) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> keys(0, key_range - 1);
  std::vector<TraceOp> trace;
  trace.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = unit(rng);
    TraceOp op;
    op.key = static_cast<Key>(keys(rng));
    if (s < insert_ratio) {
      op.kind = OpKind::insert;
      op.value = static_cast<Value>(i);
    } else if (s < insert_ratio + erase_ratio) {
      op.kind = OpKind::erase;
    } else {
      op.kind = OpKind::find;
    }
    trace.push_back(op);
  }
  return trace;
}

HistoryVerdict check_history(std::vector<Event> events) {
  HistoryVerdict verdict;
  verdict.events = events.size();
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.key != b.key ? a.key < b.key : a.start < b.start;
  });

  std::vector<const Event*> writes;
  std::size_t lo = 0;
  while (lo < events.size()) {
    std::size_t hi = lo;
    while (hi < events.size() && events[hi].key == events[lo].key) ++hi;

    writes.clear();
    for (std::size_t i = lo; i < hi; ++i)
      if (events[i].kind != OpKind::find) writes.push_back(&events[i]);

    for (std::size_t i = lo; i < hi; ++i) {
      const Event& f = events[i];
      if (f.kind != OpKind::find) continue;
      ++verdict.finds_checked;

      // A write w is superseded before f began if another write started
      // after w ended and itself ended before f started.
      bool any_completed = false;
      std::uint64_t latest_start = 0;
      for (const Event* w : writes) {
        if (w->end < f.start) {
          any_completed = true;
          latest_start = std::max(latest_start, w->start);
        }
      }

      bool explained = false;
      if (!f.result && !any_completed) explained = true;  // initial state may still be current
      for (const Event* w : writes) {
        if (explained) break;
        if (w->start > f.end) continue;
        if (any_completed && w->end < latest_start) continue;
        if (f.result) {
          explained = w->kind == OpKind::insert && w->value == *f.result;
        } else {
          explained = w->kind == OpKind::erase;
        }
      }
      if (!explained) {
        ++verdict.unexplained;
        if (verdict.examples.size() < 8) verdict.examples.push_back(f);
      }
    }
    lo = hi;
  }
  return verdict;
}

}  // namespace diht::oracle
