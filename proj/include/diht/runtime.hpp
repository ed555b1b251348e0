#pragma once

// Simulated PGAS cluster: a fixed set of locales living in one process, each
// with its own worker pool. `execute_on` plays the role of an `on` block and
// every cross-locale call is counted so message-count claims can be asserted.

#include <atomic>
#include <cassert>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "diht/backoff.hpp"

namespace diht::runtime {

using LocaleId = std::uint32_t;
using Pid = std::uint32_t;

/// Counts remote dispatches issued anywhere in a causal chain of work.
/// Installed on a thread with TallyScope and carried along with every task
/// dispatched while it is installed, including nested dispatches.
class DispatchTally {
 public:
  void record_remote() noexcept { remote_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t remote() const noexcept { return remote_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> remote_{0};
};

class TallyScope {
 public:
  explicit TallyScope(DispatchTally& tally) noexcept;
  ~TallyScope();
  TallyScope(const TallyScope&) = delete;
  TallyScope& operator=(const TallyScope&) = delete;

 private:
  DispatchTally* previous_;
};

struct ShardCounters {
  std::atomic<std::uint64_t> remote_sent{0};
  std::atomic<std::uint64_t> remote_received{0};
  std::atomic<std::uint64_t> inline_executions{0};
  std::atomic<std::uint64_t> tasks_run{0};
};

struct DispatchSnapshot {
  std::uint64_t remote = 0;
  std::uint64_t inline_executions = 0;
};

/// Owning, type-erased, move-only nullary callable.
class Task {
 public:
  Task() = default;
  template <class F>
  explicit Task(F&& f) : impl_(std::make_unique<Impl<std::decay_t<F>>>(std::forward<F>(f))) {}

  void operator()() { (*impl_)(); }
  explicit operator bool() const noexcept { return impl_ != nullptr; }

 private:
  struct Base {
    virtual ~Base() = default;
    virtual void operator()() = 0;
  };
  template <class F>
  struct Impl final : Base {
    explicit Impl(F&& f) : fn(std::move(f)) {}
    explicit Impl(const F& f) : fn(f) {}
    void operator()() override { fn(); }
    F fn;
  };
  std::unique_ptr<Base> impl_;
};

class Cluster;

namespace detail {

struct QueuedTask {
  Task fn;
  DispatchTally* tally = nullptr;
};

class Shard {
 public:
  Shard(Cluster& cluster, LocaleId id, std::size_t workers);
  ~Shard();

  void start();
  void stop();
  void push(QueuedTask task);
  void wake();

  /// Runs queued tasks on the calling worker until `done` holds.
  void help_until(const std::function<bool()>& done);

  LocaleId id() const noexcept { return id_; }
  ShardCounters& counters() noexcept { return counters_; }

  // Privatized instances, indexed by pid.
  std::atomic<void*>& slot(Pid pid) { return privatized_[pid]; }

 private:
  void worker_loop();
  void run(QueuedTask& task);

  Cluster& cluster_;
  const LocaleId id_;
  const std::size_t num_workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<QueuedTask> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  ShardCounters counters_;
  std::unique_ptr<std::atomic<void*>[]> privatized_;
};

template <class R>
struct Completion {
  std::atomic<bool> done{false};
  std::optional<R> value;
  std::exception_ptr error;
  std::optional<LocaleId> waiter;
};

template <>
struct Completion<void> {
  std::atomic<bool> done{false};
  std::exception_ptr error;
  std::optional<LocaleId> waiter;
};

}  // namespace detail

/// Maximum number of live privatized objects per cluster.
inline constexpr std::size_t kMaxPrivatized = 1u << 14;

/// Locale executing the calling thread. Threads that do not belong to any
/// cluster behave like the program's main task and report locale 0.
LocaleId here() noexcept;

/// True on a shard's pool worker (as opposed to a task thread or main).
bool on_worker() noexcept;

/// Yields the calling task. On a pool worker this runs other queued work of
/// the same locale instead of idling, which keeps nested `on` blocks from
/// deadlocking a fully busy pool.
void wait_until(const std::function<bool()>& done);

class Cluster {
 public:
  Cluster(std::size_t num_locales, std::size_t tasks_per_locale);
  ~Cluster();
  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  std::size_t num_locales() const noexcept { return shards_.size(); }
  std::size_t tasks_per_locale() const noexcept { return tasks_per_locale_; }

  /// Runs `work` in the context of `target` and returns its result. Runs
  /// inline when `target` is the calling locale. Exceptions thrown by `work`
  /// are rethrown in the caller.
  template <class F>
  auto execute_on(LocaleId target, F&& work) -> std::invoke_result_t<std::decay_t<F>&>;

  /// Fire-and-forget submission to a locale's pool ("begin" on that locale).
  template <class F>
  void post(LocaleId target, F&& work);

  /// Data-parallel loop on the calling locale. `body(begin, end)` is invoked
  /// over disjoint chunks of [0, n), at most tasks_per_locale at a time.
  template <class F>
  void forall(std::size_t n, F&& body);

  /// Spawns `count` tasks on `target`, each running `fn(task_index)`, and
  /// waits for all of them. Tasks get dedicated threads, not pool workers.
  template <class F>
  void coforall_tasks(LocaleId target, std::size_t count, F&& fn);

  /// One task on every locale running `fn(locale)`; waits for all.
  template <class F>
  void coforall_locales(F&& fn);

  /// Registers one instance per locale built by `factory(locale)`.
  template <class T, class Factory>
  Pid privatize(Factory&& factory);

  /// Per-locale instance for `pid`; never communicates.
  template <class T>
  T& privatized(Pid pid, LocaleId locale) const;

  void unprivatize(Pid pid);

  ShardCounters& counters(LocaleId locale) { return shards_.at(locale)->counters(); }
  DispatchSnapshot snapshot() const;

  detail::Shard& shard(LocaleId locale) { return *shards_[locale]; }

 private:
  void check_locale(LocaleId locale) const {
    if (locale >= shards_.size()) throw std::out_of_range("locale id out of range");
  }
  void count_remote(LocaleId from, LocaleId to);
  Pid allocate_pid();
  void store_owner(Pid pid, LocaleId locale, std::shared_ptr<void> owner);

  template <class R>
  void await(detail::Completion<R>& c);

  const std::size_t tasks_per_locale_;
  std::vector<std::unique_ptr<detail::Shard>> shards_;

  std::mutex owners_mu_;
  std::vector<std::vector<std::shared_ptr<void>>> owners_;  // [pid][locale]
  std::vector<Pid> free_pids_;
  Pid next_pid_ = 0;
};

class BlockDistribution {
 public:
  BlockDistribution(std::size_t num_locales, std::size_t per_locale)
      : num_locales_(num_locales), per_locale_(per_locale) {
    if (num_locales == 0 || per_locale == 0)
      throw std::invalid_argument("block distribution needs positive extents");
  }

  std::size_t total_slots() const noexcept { return num_locales_ * per_locale_; }
  std::size_t per_locale() const noexcept { return per_locale_; }
  std::size_t num_locales() const noexcept { return num_locales_; }

  LocaleId locale_of(std::size_t index) const {
    assert(index < total_slots());
    return static_cast<LocaleId>(index / per_locale_);
  }
  std::size_t first_index(LocaleId locale) const noexcept { return locale * per_locale_; }
  std::size_t local_index(std::size_t index) const noexcept { return index % per_locale_; }

 private:
  std::size_t num_locales_;
  std::size_t per_locale_;
};

// ---------------------------------------------------------------------------

namespace detail {
DispatchTally* current_tally() noexcept;
void set_thread_context(LocaleId locale, bool worker, Shard* shard) noexcept;

struct ThreadContextGuard {
  ThreadContextGuard(LocaleId locale, DispatchTally* tally) noexcept;
  ~ThreadContextGuard();
};

template <class R>
void complete(Cluster& cluster, Completion<R>& c) {
  std::optional<LocaleId> waiter = c.waiter;
  c.done.store(true, std::memory_order_release);
  c.done.notify_all();
  if (waiter) cluster.shard(*waiter).wake();
}
}  // namespace detail

template <class R>
void Cluster::await(detail::Completion<R>& c) {
  if (c.waiter) {
    shards_[*c.waiter]->help_until([&c] { return c.done.load(std::memory_order_acquire); });
  } else {
    c.done.wait(false, std::memory_order_acquire);
  }
}

template <class F>
auto Cluster::execute_on(LocaleId target, F&& work) -> std::invoke_result_t<std::decay_t<F>&> {
  using R = std::invoke_result_t<std::decay_t<F>&>;
  check_locale(target);
  const LocaleId from = here();
  if (from == target) {
    shards_[target]->counters().inline_executions.fetch_add(1, std::memory_order_relaxed);
    return work();
  }

  count_remote(from, target);
  auto completion = std::make_shared<detail::Completion<R>>();
  if (on_worker()) completion->waiter = from;
  shards_[target]->push(detail::QueuedTask{
      Task([this, c = completion, fn = std::decay_t<F>(std::forward<F>(work))]() mutable {
        try {
          if constexpr (std::is_void_v<R>) {
            fn();
          } else {
            c->value.emplace(fn());
          }
        } catch (...) {
          c->error = std::current_exception();
        }
        detail::complete(*this, *c);
      }),
      detail::current_tally()});
  await(*completion);
  if (completion->error) std::rethrow_exception(completion->error);
  if constexpr (!std::is_void_v<R>) return std::move(*completion->value);
}

template <class F>
void Cluster::post(LocaleId target, F&& work) {
  check_locale(target);
  const LocaleId from = here();
  if (from != target) count_remote(from, target);
  shards_[target]->push(detail::QueuedTask{Task(std::forward<F>(work)), detail::current_tally()});
}

template <class F>
void Cluster::forall(std::size_t n, F&& body) {
  if (n == 0) return;
  const LocaleId self = here();
  const std::size_t chunks = std::min(n, tasks_per_locale_);
  if (chunks == 1) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t step = (n + chunks - 1) / chunks;
  std::atomic<std::size_t> remaining{chunks - 1};
  std::mutex error_mu;
  std::exception_ptr error;
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t begin = c * step;
    const std::size_t end = std::min(n, begin + step);
    shards_[self]->push(detail::QueuedTask{
        Task([&, begin, end] {
          try {
            if (begin < end) body(begin, end);
          } catch (...) {
            std::lock_guard lk(error_mu);
            if (!error) error = std::current_exception();
          }
          remaining.fetch_sub(1, std::memory_order_acq_rel);
        }),
        detail::current_tally()});
  }
  try {
    body(std::size_t{0}, std::min(n, step));
  } catch (...) {
    std::lock_guard lk(error_mu);
    if (!error) error = std::current_exception();
  }
  wait_until([&] { return remaining.load(std::memory_order_acquire) == 0; });
  if (error) std::rethrow_exception(error);
}

template <class F>
void Cluster::coforall_tasks(LocaleId target, std::size_t count, F&& fn) {
  check_locale(target);
  const LocaleId from = here();
  if (from != target) count_remote(from, target);
  DispatchTally* tally = detail::current_tally();
  std::mutex error_mu;
  std::exception_ptr error;
  std::vector<std::thread> threads;
  threads.reserve(count);
  for (std::size_t tid = 0; tid < count; ++tid) {
    threads.emplace_back([&, tid] {
      detail::ThreadContextGuard ctx(target, tally);
      try {
        fn(tid);
      } catch (...) {
        std::lock_guard lk(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

template <class F>
void Cluster::coforall_locales(F&& fn) {
  const LocaleId from = here();
  DispatchTally* tally = detail::current_tally();
  std::mutex error_mu;
  std::exception_ptr error;
  std::vector<std::thread> threads;
  threads.reserve(num_locales());
  for (LocaleId loc = 0; loc < num_locales(); ++loc) {
    if (loc != from) count_remote(from, loc);
    threads.emplace_back([&, loc] {
      detail::ThreadContextGuard ctx(loc, tally);
      try {
        fn(loc);
      } catch (...) {
        std::lock_guard lk(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

template <class T, class Factory>
Pid Cluster::privatize(Factory&& factory) {
  const Pid pid = allocate_pid();
  try {
    for (LocaleId loc = 0; loc < num_locales(); ++loc) {
      std::shared_ptr<T> instance = factory(loc);
      store_owner(pid, loc, instance);
      shards_[loc]->slot(pid).store(instance.get(), std::memory_order_release);
    }
  } catch (...) {
    unprivatize(pid);
    throw;
  }
  return pid;
}

template <class T>
T& Cluster::privatized(Pid pid, LocaleId locale) const {
  assert(pid < kMaxPrivatized);
  void* p = shards_[locale]->slot(pid).load(std::memory_order_acquire);
  assert(p != nullptr && "pid not privatized");
  return *static_cast<T*>(p);
}

}  // namespace diht::runtime
