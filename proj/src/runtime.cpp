#include "diht/runtime.hpp"

#include <algorithm>
#include <chrono>

namespace diht::runtime {

namespace {

struct ThreadContext {
  LocaleId locale = 0;
  bool worker = false;
  detail::Shard* shard = nullptr;
  DispatchTally* tally = nullptr;
};

thread_local ThreadContext t_ctx;

}  // namespace

LocaleId here() noexcept { return t_ctx.locale; }
bool on_worker() noexcept { return t_ctx.worker; }

void wait_until(const std::function<bool()>& done) {
  if (t_ctx.worker && t_ctx.shard != nullptr) {
    t_ctx.shard->help_until(done);
    return;
  }
  Backoff backoff;
  while (!done()) backoff();
}

TallyScope::TallyScope(DispatchTally& tally) noexcept : previous_(t_ctx.tally) { t_ctx.tally = &tally; }
TallyScope::~TallyScope() { t_ctx.tally = previous_; }

namespace detail {

DispatchTally* current_tally() noexcept { return t_ctx.tally; }

void set_thread_context(LocaleId locale, bool worker, Shard* shard) noexcept {
  t_ctx.locale = locale;
  t_ctx.worker = worker;
  t_ctx.shard = shard;
}

ThreadContextGuard::ThreadContextGuard(LocaleId locale, DispatchTally* tally) noexcept {
  t_ctx = ThreadContext{locale, false, nullptr, tally};
}
ThreadContextGuard::~ThreadContextGuard() { t_ctx = ThreadContext{}; }

Shard::Shard(Cluster& cluster, LocaleId id, std::size_t workers)
    : cluster_(cluster),
      id_(id),
      num_workers_(workers),
      privatized_(std::make_unique<std::atomic<void*>[]>(kMaxPrivatized)) {
  for (std::size_t i = 0; i < kMaxPrivatized; ++i) privatized_[i].store(nullptr, std::memory_order_relaxed);
}

Shard::~Shard() { stop(); }

void Shard::start() {
  workers_.reserve(num_workers_);
  for (std::size_t i = 0; i < num_workers_; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void Shard::stop() {
  {
    std::lock_guard lk(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
  workers_.clear();
}

void Shard::push(QueuedTask task) {
  {
    std::lock_guard lk(mu_);
    queue_.push_back(std::move(task));
  }
  // Helpers waiting on completions share the condition variable with idle
  // workers; either kind can run the task.
  cv_.notify_one();
}

void Shard::wake() {
  { std::lock_guard lk(mu_); }
  cv_.notify_all();
}

void Shard::run(QueuedTask& task) {
  DispatchTally* saved = t_ctx.tally;
  t_ctx.tally = task.tally;
  counters_.tasks_run.fetch_add(1, std::memory_order_relaxed);
  task.fn();
  t_ctx.tally = saved;
}

void Shard::worker_loop() {
  set_thread_context(id_, true, this);
  std::unique_lock lk(mu_);
  for (;;) {
    cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) return;  // stopping and drained
    QueuedTask task = std::move(queue_.front());
    queue_.pop_front();
    lk.unlock();
    run(task);
    task = QueuedTask{};
    lk.lock();
  }
}

void Shard::help_until(const std::function<bool()>& done) {
  using namespace std::chrono_literals;
  std::unique_lock lk(mu_);
  while (!done()) {
    if (!queue_.empty()) {
      QueuedTask task = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      run(task);
      task = QueuedTask{};
      lk.lock();
      continue;
    }
    // Completions of remote calls notify us; other conditions are polled.
    cv_.wait_for(lk, 200us);
  }
}

}  // namespace detail

Cluster::Cluster(std::size_t num_locales, std::size_t tasks_per_locale) : tasks_per_locale_(tasks_per_locale) {
  if (num_locales == 0) throw std::invalid_argument("cluster needs at least one locale");
  if (tasks_per_locale == 0) throw std::invalid_argument("cluster needs at least one task per locale");
  shards_.reserve(num_locales);
  for (std::size_t i = 0; i < num_locales; ++i)
    shards_.push_back(std::make_unique<detail::Shard>(*this, static_cast<LocaleId>(i), tasks_per_locale));
  for (auto& s : shards_) s->start();
}

Cluster::~Cluster() {
  for (auto& s : shards_) s->stop();
}

void Cluster::count_remote(LocaleId from, LocaleId to) {
  shards_[from]->counters().remote_sent.fetch_add(1, std::memory_order_relaxed);
  shards_[to]->counters().remote_received.fetch_add(1, std::memory_order_relaxed);
  if (DispatchTally* tally = detail::current_tally()) tally->record_remote();
}

DispatchSnapshot Cluster::snapshot() const {
  DispatchSnapshot s;
  for (const auto& shard : shards_) {
    s.remote += shard->counters().remote_sent.load(std::memory_order_relaxed);
    s.inline_executions += shard->counters().inline_executions.load(std::memory_order_relaxed);
  }
  return s;
}

Pid Cluster::allocate_pid() {
  std::lock_guard lk(owners_mu_);
  if (!free_pids_.empty()) {
    Pid pid = free_pids_.back();
    free_pids_.pop_back();
    return pid;
  }
  if (next_pid_ >= kMaxPrivatized) throw std::length_error("privatization table exhausted");
  owners_.emplace_back(num_locales());
  return next_pid_++;
}

void Cluster::store_owner(Pid pid, LocaleId locale, std::shared_ptr<void> owner) {
  std::lock_guard lk(owners_mu_);
  owners_[pid][locale] = std::move(owner);
}

void Cluster::unprivatize(Pid pid) {
  std::vector<std::shared_ptr<void>> doomed;
  {
    std::lock_guard lk(owners_mu_);
    if (pid >= owners_.size()) return;
    for (auto& s : shards_) s->slot(pid).store(nullptr, std::memory_order_release);
    doomed.swap(owners_[pid]);
    owners_[pid].resize(num_locales());
    free_pids_.push_back(pid);
  }
  // Instances are destroyed outside the registry lock.
  doomed.clear();
}

}  // namespace diht::runtime
