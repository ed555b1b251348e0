#include "diht/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "diht/distributed_map.hpp"
#include "diht/runtime.hpp"

namespace diht::bench {

using Map = DistributedMap<std::int64_t, std::int64_t>;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::ops_sync:
      return "ops-sync";
    case Mode::ops_async:
      return "ops-async";
    case Mode::iter_serial:
      return "iter-serial";
    case Mode::iter_parallel:
      return "iter-parallel";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view text) noexcept {
  for (Mode m : {Mode::ops_sync, Mode::ops_async, Mode::iter_serial, Mode::iter_parallel})
    if (text == to_string(m)) return m;
  return std::nullopt;
}

void BenchConfig::set_read_ratio(double read) {
  read_ratio = read;
  insert_ratio = (1.0 - read) / 2;
  erase_ratio = (1.0 - read) / 2;
}

void BenchConfig::validate() const {
  if (num_locales == 0) throw std::invalid_argument("locales must be positive");
  if (tasks_per_locale == 0) throw std::invalid_argument("tasks must be positive");
  for (double r : {read_ratio, insert_ratio, erase_ratio})
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("ratios must lie in [0, 1]");
  if (std::abs(read_ratio + insert_ratio + erase_ratio - 1.0) > 1e-9)
    throw std::invalid_argument("read, insert and erase ratios must sum to 1");
  if (key_bits == 0 || key_bits > 32) throw std::invalid_argument("key-bits must be in [1, 32]");
  map.validate();
}

std::uint64_t ops_for_task(std::uint64_t total, std::size_t locales, std::size_t tasks, std::size_t loc,
                           std::size_t tid) noexcept {
  const std::uint64_t workers = std::uint64_t{locales} * tasks;
  const std::uint64_t g = std::uint64_t{loc} * tasks + tid;
  return total / workers + (g < total % workers ? 1 : 0);
}

OpGenerator::OpGenerator(const BenchConfig& config, std::size_t loc, std::size_t tid)
    : keys_(0, static_cast<std::int64_t>(config.key_range()) - 1),
      insert_ratio_(config.insert_ratio),
      erase_ratio_(config.erase_ratio) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.rng_seed), static_cast<std::uint32_t>(config.rng_seed >> 32),
                    static_cast<std::uint32_t>(loc), static_cast<std::uint32_t>(tid)};
  rng_.seed(seq);
}

oracle::TraceOp OpGenerator::next() {
  oracle::TraceOp op;
  const double s = unit_(rng_);
  op.key = keys_(rng_);
  ++counter_;
  if (s < insert_ratio_) {
    op.kind = oracle::OpKind::insert;
    op.value = counter_;
  } else if (s < insert_ratio_ + erase_ratio_) {
    op.kind = oracle::OpKind::erase;
  } else {
    op.kind = oracle::OpKind::find;
  }
  return op;
}

namespace {

void fill_common(BenchReport& r, const BenchConfig& config) {
  r.mode = config.mode;
  r.locales = config.num_locales;
  r.tasks = config.tasks_per_locale;
}

void finish_timing(BenchReport& r, Clock::duration elapsed) {
  r.elapsed_s = std::chrono::duration<double>(elapsed).count();
  r.ops_per_s = r.elapsed_s > 0 ? static_cast<double>(r.ops) / r.elapsed_s : 0.0;
}

}  // namespace

BenchReport run_ops_bench(const BenchConfig& config) {
  config.validate();
  if (config.mode != Mode::ops_sync && config.mode != Mode::ops_async)
    throw std::invalid_argument("run_ops_bench needs an ops mode");
  const bool async = config.mode == Mode::ops_async;

  runtime::Cluster cluster(config.num_locales, config.tasks_per_locale);
  BenchReport report;
  fill_common(report, config);
  {
    Map map(cluster, config.map);
    if (config.prefill) {
      auto tok = map.get_token();
      const auto range = static_cast<std::int64_t>(config.key_range());
      for (std::int64_t k = 0; k < range; ++k) map.insert_async(k, k + 1, tok);
      map.flush_all_buffers();
    }

    const runtime::DispatchSnapshot before = cluster.snapshot();
    const std::uint64_t local_before = map.stats().local_ops;
    std::vector<std::atomic<std::uint64_t>> per_locale(config.num_locales);

    const auto t0 = Clock::now();
    cluster.coforall_locales([&](runtime::LocaleId loc) {
      cluster.coforall_tasks(loc, config.tasks_per_locale, [&](std::size_t tid) {
        OpGenerator gen(config, loc, tid);
        auto tok = map.get_token();
        const std::uint64_t n =
            ops_for_task(config.total_ops, config.num_locales, config.tasks_per_locale, loc, tid);
        for (std::uint64_t i = 0; i < n; ++i) {
          const oracle::TraceOp op = gen.next();
          switch (op.kind) {
            case oracle::OpKind::insert:
              async ? map.insert_async(op.key, op.value, tok) : map.insert(op.key, op.value, tok);
              break;
            case oracle::OpKind::erase:
              async ? map.erase_async(op.key, tok) : static_cast<void>(map.erase(op.key, tok));
              break;
            case oracle::OpKind::find:
              if (async) {
                map.find_async(op.key, tok);
              } else {
                map.find(op.key, tok);
              }
              break;
          }
        }
        per_locale[loc].fetch_add(n, std::memory_order_relaxed);
      });
      if (async) map.flush_local_buffers();
    });
    const auto elapsed = Clock::now() - t0;

    const runtime::DispatchSnapshot after = cluster.snapshot();
    const MapStats stats = map.stats();
    report.ops = config.total_ops;
    report.remote_dispatches = after.remote - before.remote;
    report.local_ops = stats.local_ops - local_before;
    report.buffers_flushed = stats.buffers_flushed;
    report.dispatch_violations = stats.dispatch_violations;
    for (auto& c : per_locale) report.per_locale_ops.push_back(c.load());
    finish_timing(report, elapsed);

    ebr::EpochManager& mgr = map.epoch_manager();
    for (int i = 0; i < 3; ++i) mgr.try_advance();
    report.retired = mgr.retired();
    report.reclaimed = mgr.reclaimed();
  }
  return report;
}

std::vector<BenchReport> run_iter_bench(const BenchConfig& config) {
  config.validate();
  runtime::Cluster cluster(config.num_locales, config.tasks_per_locale);
  Map map(cluster, config.map);

  const auto range = static_cast<std::int64_t>(config.key_range());
  const std::int64_t lo = -range / 2;
  cluster.coforall_locales([&](runtime::LocaleId loc) {
    auto tok = map.get_token();
    const std::int64_t per = range / static_cast<std::int64_t>(config.num_locales) + 1;
    const std::int64_t begin = lo + per * loc;
    const std::int64_t end = std::min(lo + range, begin + per);
    for (std::int64_t k = begin; k < end; ++k) map.insert_async(k, 0, tok);
  });
  map.flush_all_buffers();

  std::vector<BenchReport> reports;
  auto measure = [&](Mode mode, auto&& iterate) {
    BenchReport r;
    fill_common(r, config);
    r.mode = mode;
    std::atomic<std::uint64_t> visits{0};
    const runtime::DispatchSnapshot before = cluster.snapshot();
    const auto t0 = Clock::now();
    iterate(visits);
    const auto elapsed = Clock::now() - t0;
    r.visits = visits.load();
    r.ops = r.visits;
    r.remote_dispatches = cluster.snapshot().remote - before.remote;
    finish_timing(r, elapsed);
    ebr::EpochManager& mgr = map.epoch_manager();
    r.retired = mgr.retired();
    r.reclaimed = mgr.reclaimed();
    reports.push_back(r);
  };

  const bool both = config.mode != Mode::iter_serial && config.mode != Mode::iter_parallel;
  if (both || config.mode == Mode::iter_parallel) {
    measure(Mode::iter_parallel, [&](std::atomic<std::uint64_t>& visits) {
      map.parallel_for_each([&](const std::int64_t&, const std::int64_t&) {
        thread_local std::mt19937 yield_rng(std::random_device{}());
        const int times = std::uniform_int_distribution<int>(0, 10)(yield_rng);
        for (int i = 0; i < times; ++i) std::this_thread::yield();
        visits.fetch_add(1, std::memory_order_relaxed);
      });
    });
  }
  if (both || config.mode == Mode::iter_serial) {
    measure(Mode::iter_serial, [&](std::atomic<std::uint64_t>& visits) {
      map.for_each([&](const std::int64_t&, const std::int64_t&) {
        std::this_thread::yield();
        visits.fetch_add(1, std::memory_order_relaxed);
      });
    });
  }
  return reports;
}

std::vector<BenchReport> run(const BenchConfig& config) {
  if (config.mode == Mode::ops_sync || config.mode == Mode::ops_async) return {run_ops_bench(config)};
  return run_iter_bench(config);
}

std::string csv_header() { return "mode,locales,tasks,ops,elapsed_s,ops_per_s,remote_dispatches,local_ops"; }

std::string to_csv(const BenchReport& r) {
  std::ostringstream out;
  out << to_string(r.mode) << ',' << r.locales << ',' << r.tasks << ',' << r.ops << ',' << r.elapsed_s << ','
      << r.ops_per_s << ',' << r.remote_dispatches << ',' << r.local_ops;
  return out.str();
}

nlohmann::json to_json(const BenchReport& r) {
  return nlohmann::json{
      {"mode", std::string(to_string(r.mode))},
      {"locales", r.locales},
      {"tasks", r.tasks},
      {"ops", r.ops},
      {"elapsed_s", r.elapsed_s},
      {"ops_per_s", r.ops_per_s},
      {"remote_dispatches", r.remote_dispatches},
      {"local_ops", r.local_ops},
      {"retired", r.retired},
      {"reclaimed", r.reclaimed},
      {"buffers_flushed", r.buffers_flushed},
      {"dispatch_violations", r.dispatch_violations},
      {"visits", r.visits},
      {"per_locale_ops", r.per_locale_ops},
  };
}

std::string to_text(const BenchReport& r) {
  std::ostringstream out;
  out << to_string(r.mode) << ": " << r.ops << " ops on " << r.locales << "x" << r.tasks << " in " << r.elapsed_s
      << " s (" << r.ops_per_s << " ops/s), remote dispatches " << r.remote_dispatches << ", local ops "
      << r.local_ops;
  if (r.mode == Mode::iter_serial || r.mode == Mode::iter_parallel) out << ", visits " << r.visits;
  out << ", reclaimed " << r.reclaimed << "/" << r.retired;
  return out.str();
}

}  // namespace diht::bench
