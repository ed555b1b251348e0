#pragma once

#include <cstddef>
#include <cstdint>

namespace diht {

struct MapConfig {
  std::size_t root_buckets_per_locale = 1024;
  std::size_t bucket_num_elements = 8;
  std::size_t buffer_size = 10240;
  std::uint64_t root_seed = 0x5eed5eedULL;
  /// Levels of PointerLists allowed below the root.
  std::size_t max_depth = 4;
  /// Slot count of depth-1 PointerLists; doubles at each deeper level.
  std::size_t inner_base_size = 1024;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;

  std::size_t level_size(std::size_t depth) const noexcept {
    return depth == 0 ? root_buckets_per_locale : inner_base_size << (depth - 1);
  }
};

}  // namespace diht
