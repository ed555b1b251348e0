#pragma once

// Desk-scale versions of the operations and iteration microbenchmarks.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "diht/config.hpp"
#include "diht/oracle.hpp"

namespace diht::bench {

enum class Mode { ops_sync, ops_async, iter_serial, iter_parallel };

std::string_view to_string(Mode mode) noexcept;
std::optional<Mode> parse_mode(std::string_view text) noexcept;

struct BenchConfig {
  std::size_t num_locales = 4;
  std::size_t tasks_per_locale = 4;
  std::uint64_t total_ops = 100000;
  double read_ratio = 0.8;
  double insert_ratio = 0.1;
  double erase_ratio = 0.1;
  unsigned key_bits = 16;
  MapConfig map;
  std::uint64_t rng_seed = 42;
  Mode mode = Mode::ops_async;
  /// Pre-fill the key range before the timed phase (ops modes).
  bool prefill = true;

  /// Sets insert/erase to split the non-read share evenly.
  void set_read_ratio(double read);

  /// Throws std::invalid_argument on the first bad field.
  void validate() const;

  std::uint64_t key_range() const noexcept { return std::uint64_t{1} << key_bits; }
};

struct BenchReport {
  Mode mode = Mode::ops_async;
  std::size_t locales = 0;
  std::size_t tasks = 0;
  std::uint64_t ops = 0;
  double elapsed_s = 0;
  double ops_per_s = 0;
  std::uint64_t remote_dispatches = 0;
  std::uint64_t local_ops = 0;
  std::uint64_t retired = 0;
  std::uint64_t reclaimed = 0;
  std::uint64_t buffers_flushed = 0;
  std::uint64_t dispatch_violations = 0;
  std::uint64_t visits = 0;  // iteration modes
  std::vector<std::uint64_t> per_locale_ops;
};

/// Number of ops run by task `tid` on locale `loc`; totals are conserved.
std::uint64_t ops_for_task(std::uint64_t total, std::size_t locales, std::size_t tasks, std::size_t loc,
                           std::size_t tid) noexcept;

/// Deterministic per-(locale, task) workload stream.
class OpGenerator {
 public:
  OpGenerator(const BenchConfig& config, std::size_t loc, std::size_t tid);
  oracle::TraceOp next();

 private:
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::uniform_int_distribution<std::int64_t> keys_;
  double insert_ratio_;
  double erase_ratio_;
  std::int64_t counter_ = 0;
};

BenchReport run_ops_bench(const BenchConfig& config);

/// Parallel iteration followed by serial iteration over one pre-filled map.
std::vector<BenchReport> run_iter_bench(const BenchConfig& config);

/// Runs whatever `config.mode` selects.
std::vector<BenchReport> run(const BenchConfig& config);

std::string csv_header();
std::string to_csv(const BenchReport& report);
nlohmann::json to_json(const BenchReport& report);
std::string to_text(const BenchReport& report);

}  // namespace diht::bench
