#pragma once

// Result handle for an asynchronous find. The aggregated record holds the
// other reference and fulfills it when the buffer is processed.

#include <atomic>
#include <cassert>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>

#include "diht/runtime.hpp"

namespace diht {

enum class FutureStatus : std::uint8_t { pending = 0, succeeded = 1, failed = 2 };

template <class V>
class MapFuture {
 public:
  MapFuture() : state_(std::make_shared<State>()) {}

  FutureStatus status() const noexcept { return state_->status.load(std::memory_order_acquire); }
  bool ready() const noexcept { return status() != FutureStatus::pending; }
  bool succeeded() const noexcept { return status() == FutureStatus::succeeded; }

  /// Value of a ready future; nullopt if the key was absent.
  const std::optional<V>& value() const noexcept {
    assert(ready());
    return state_->value;
  }

  /// Blocks (yielding) until the future is fulfilled.
  std::optional<V> get() const {
    runtime::wait_until([this] { return ready(); });
    return state_->value;
  }

  /// Called once by whoever processes the find.
  void fulfill(std::optional<V> result) const {
    assert(!ready());
    const bool found = result.has_value();
    state_->value = std::move(result);
    state_->status.store(found ? FutureStatus::succeeded : FutureStatus::failed, std::memory_order_release);
    state_->status.notify_all();
  }

  bool same_state(const MapFuture& other) const noexcept { return state_ == other.state_; }

 private:
  struct State {
    std::atomic<FutureStatus> status{FutureStatus::pending};
    std::optional<V> value;
  };
  std::shared_ptr<State> state_;
};

}  // namespace diht
