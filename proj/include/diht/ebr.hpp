#pragma once

// Epoch-based reclamation.
//
// A single logical global epoch is shared by every locale; each locale keeps
// its own token registry and three limbo lists. An object deferred while the
// global epoch reads `e` goes to limbo list `e % 3` and is freed, together
// with everything else in that list, when the epoch advances to `e + 2`.
// The epoch advances only when every pinned token announces the current
// epoch, so no pinned task can still hold a reference by then.

#include <array>
#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

namespace diht::ebr {

class EpochManager;
class Token;

/// Base for anything handed to Token::defer_delete.
class Retirable {
 public:
  virtual ~Retirable() = default;

 private:
  friend class EpochManager;
  Retirable* limbo_next_ = nullptr;
};

namespace detail {

struct TokenRecord {
  // bit 0: pinned, remaining bits: announced epoch
  std::atomic<std::uint64_t> announce{0};
  std::atomic<bool> in_use{false};
  TokenRecord* next = nullptr;
  // Owned by the token holder.
  unsigned depth = 0;
  std::uint64_t retirements = 0;
  std::uint32_t locale = 0;
};

}  // namespace detail

struct EpochOptions {
  /// A token attempts to advance the epoch on every n-th deferral.
  std::uint64_t advance_interval = 64;
};

class Token {
 public:
  Token() = default;
  Token(Token&& other) noexcept;
  Token& operator=(Token&& other) noexcept;
  Token(const Token&) = delete;
  Token& operator=(const Token&) = delete;
  ~Token();

  /// Enters the current epoch. Re-entrant: nested pins need matching unpins.
  void pin();
  void unpin();

  bool registered() const noexcept { return rec_ != nullptr; }
  bool pinned() const noexcept { return rec_ != nullptr && rec_->depth > 0; }
  std::optional<std::uint64_t> pinned_epoch() const noexcept;

  /// Hands `object` to the limbo list of the epoch this token observes now.
  /// The caller must not touch `object` afterwards.
  void defer_delete(Retirable* object);

  /// Same as defer_delete; used for lists that lost an install race.
  void try_reclaim(Retirable* object) { defer_delete(object); }

  EpochManager* manager() const noexcept { return manager_; }

 private:
  friend class EpochManager;
  Token(EpochManager* manager, detail::TokenRecord* rec) noexcept : manager_(manager), rec_(rec) {}
  void release() noexcept;

  EpochManager* manager_ = nullptr;
  detail::TokenRecord* rec_ = nullptr;
};

class PinGuard {
 public:
  explicit PinGuard(Token& token) : token_(token) { token_.pin(); }
  ~PinGuard() { token_.unpin(); }
  PinGuard(const PinGuard&) = delete;
  PinGuard& operator=(const PinGuard&) = delete;

 private:
  Token& token_;
};

class EpochManager {
 public:
  explicit EpochManager(std::size_t num_locales = 1, EpochOptions options = {});
  ~EpochManager();
  EpochManager(const EpochManager&) = delete;
  EpochManager& operator=(const EpochManager&) = delete;

  /// Registers a token on the calling locale. Fresh tokens are unpinned.
  Token get_token();

  /// Advances the global epoch if no pinned token lags behind it, freeing
  /// the limbo list that is now two epochs old.
  bool try_advance();

  std::uint64_t global_epoch() const noexcept { return epoch_.load(std::memory_order_seq_cst); }
  std::uint64_t retired() const noexcept { return retired_.load(std::memory_order_acquire); }
  std::uint64_t reclaimed() const noexcept { return reclaimed_.load(std::memory_order_acquire); }
  std::uint64_t pending() const noexcept { return retired() - reclaimed(); }
  std::size_t num_locales() const noexcept { return locales_.size(); }

  /// Number of registered (in-use) tokens across all locales.
  std::size_t live_tokens() const;

 private:
  friend class Token;

  struct LocaleState {
    std::atomic<detail::TokenRecord*> tokens{nullptr};
    std::array<std::atomic<Retirable*>, 3> limbo{};
  };

  void pin(detail::TokenRecord& rec);
  void unpin(detail::TokenRecord& rec);
  void defer(detail::TokenRecord& rec, Retirable* object);
  std::size_t reclaim_list(std::size_t index);

  std::atomic<std::uint64_t> epoch_{0};
  std::atomic<std::uint64_t> retired_{0};
  std::atomic<std::uint64_t> reclaimed_{0};
  std::mutex advance_mu_;
  EpochOptions options_;
  std::vector<std::unique_ptr<LocaleState>> locales_;
};

}  // namespace diht::ebr
