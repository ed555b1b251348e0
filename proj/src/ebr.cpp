#include "diht/ebr.hpp"

#include "diht/runtime.hpp"

namespace diht::ebr {

namespace {
constexpr std::uint64_t kPinnedBit = 1;
}

Token::Token(Token&& other) noexcept : manager_(other.manager_), rec_(other.rec_) {
  other.manager_ = nullptr;
  other.rec_ = nullptr;
}

Token& Token::operator=(Token&& other) noexcept {
  if (this != &other) {
    release();
    manager_ = other.manager_;
    rec_ = other.rec_;
    other.manager_ = nullptr;
    other.rec_ = nullptr;
  }
  return *this;
}

Token::~Token() { release(); }

void Token::release() noexcept {
  if (rec_ == nullptr) return;
  assert(rec_->depth == 0 && "token released while pinned");
  rec_->depth = 0;
  rec_->announce.store(0, std::memory_order_release);
  rec_->in_use.store(false, std::memory_order_release);
  rec_ = nullptr;
  manager_ = nullptr;
}

void Token::pin() {
  assert(rec_ != nullptr);
  manager_->pin(*rec_);
}

void Token::unpin() {
  assert(rec_ != nullptr);
  assert(rec_->depth > 0 && "unpin of an unpinned token");
  manager_->unpin(*rec_);
}

std::optional<std::uint64_t> Token::pinned_epoch() const noexcept {
  if (!pinned()) return std::nullopt;
  return rec_->announce.load(std::memory_order_relaxed) >> 1;
}

void Token::defer_delete(Retirable* object) {
  assert(pinned() && "defer_delete requires a pinned token");
  manager_->defer(*rec_, object);
}

EpochManager::EpochManager(std::size_t num_locales, EpochOptions options) : options_(options) {
  if (num_locales == 0) num_locales = 1;
  if (options_.advance_interval == 0) options_.advance_interval = 1;
  locales_.reserve(num_locales);
  for (std::size_t i = 0; i < num_locales; ++i) locales_.push_back(std::make_unique<LocaleState>());
}

EpochManager::~EpochManager() {
  for (std::size_t i = 0; i < 3; ++i) reclaim_list(i);
  for (auto& loc : locales_) {
    detail::TokenRecord* rec = loc->tokens.load(std::memory_order_acquire);
    while (rec != nullptr) {
      assert(!rec->in_use.load() && "token outlived its epoch manager");
      detail::TokenRecord* next = rec->next;
      delete rec;
      rec = next;
    }
  }
}

Token EpochManager::get_token() {
  const auto locale = static_cast<std::uint32_t>(runtime::here() % locales_.size());
  LocaleState& state = *locales_[locale];
  for (detail::TokenRecord* rec = state.tokens.load(std::memory_order_acquire); rec != nullptr; rec = rec->next) {
    bool expected = false;
    if (!rec->in_use.load(std::memory_order_relaxed) &&
        rec->in_use.compare_exchange_strong(expected, true, std::memory_order_acq_rel)) {
      rec->depth = 0;
      rec->retirements = 0;
      return Token(this, rec);
    }
  }
  auto* rec = new detail::TokenRecord;
  rec->in_use.store(true, std::memory_order_relaxed);
  rec->locale = locale;
  detail::TokenRecord* head = state.tokens.load(std::memory_order_relaxed);
  do {
    rec->next = head;
  } while (!state.tokens.compare_exchange_weak(head, rec, std::memory_order_seq_cst, std::memory_order_relaxed));
  return Token(this, rec);
}

void EpochManager::pin(detail::TokenRecord& rec) {
  if (rec.depth++ > 0) return;
  // Announce, then confirm the epoch did not move underneath the
  // announcement. Unlinks are seq_cst, so once the epoch reads back the same
  // value every object freed so far is already unreachable for this task.
  std::uint64_t e = epoch_.load(std::memory_order_seq_cst);
  for (;;) {
    rec.announce.store((e << 1) | kPinnedBit, std::memory_order_seq_cst);
    std::atomic_thread_fence(std::memory_order_seq_cst);
    const std::uint64_t now = epoch_.load(std::memory_order_seq_cst);
    if (now == e) return;
    e = now;
  }
}

void EpochManager::unpin(detail::TokenRecord& rec) {
  if (--rec.depth > 0) return;
  rec.announce.store(0, std::memory_order_release);
  if (pending() > 0) try_advance();
}

void EpochManager::defer(detail::TokenRecord& rec, Retirable* object) {
  // Tag with the epoch observed now, after the object was unlinked.
  const std::uint64_t e = epoch_.load(std::memory_order_seq_cst);
  auto here = static_cast<std::size_t>(runtime::here());
  LocaleState& state = *locales_[here < locales_.size() ? here : rec.locale];
  auto& head = state.limbo[e % 3];
  retired_.fetch_add(1, std::memory_order_release);
  Retirable* old = head.load(std::memory_order_relaxed);
  do {
    object->limbo_next_ = old;
  } while (!head.compare_exchange_weak(old, object, std::memory_order_release, std::memory_order_relaxed));
  if (++rec.retirements % options_.advance_interval == 0) try_advance();
}

bool EpochManager::try_advance() {
  std::unique_lock lk(advance_mu_, std::try_to_lock);
  if (!lk.owns_lock()) return false;
  const std::uint64_t e = epoch_.load(std::memory_order_seq_cst);
  for (const auto& loc : locales_) {
    for (const detail::TokenRecord* rec = loc->tokens.load(std::memory_order_seq_cst); rec != nullptr;
         rec = rec->next) {
      const std::uint64_t a = rec->announce.load(std::memory_order_seq_cst);
      if ((a & kPinnedBit) != 0 && (a >> 1) != e) return false;
    }
  }
  epoch_.store(e + 1, std::memory_order_seq_cst);
  // Objects tagged e - 1 can no longer be reached by anyone.
  reclaim_list((e + 2) % 3);
  return true;
}

std::size_t EpochManager::reclaim_list(std::size_t index) {
  std::size_t freed = 0;
  for (auto& loc : locales_) {
    Retirable* node = loc->limbo[index].exchange(nullptr, std::memory_order_acq_rel);
    while (node != nullptr) {
      Retirable* next = node->limbo_next_;
      delete node;
      node = next;
      ++freed;
    }
  }
  reclaimed_.fetch_add(freed, std::memory_order_release);
  return freed;
}

std::size_t EpochManager::live_tokens() const {
  std::size_t n = 0;
  for (const auto& loc : locales_)
    for (const detail::TokenRecord* rec = loc->tokens.load(std::memory_order_acquire); rec != nullptr;
         rec = rec->next)
      n += rec->in_use.load(std::memory_order_relaxed) ? 1 : 0;
  return n;
}

}  // namespace diht::ebr
