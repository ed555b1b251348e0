#include "diht/config.hpp"

#include <stdexcept>
#include <string>

namespace diht {

void MapConfig::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("MapConfig.") + field + " must be positive");
  };
  require(root_buckets_per_locale > 0, "root_buckets_per_locale");
  require(bucket_num_elements > 0, "bucket_num_elements");
  require(buffer_size > 0, "buffer_size");
  require(max_depth > 0, "max_depth");
  require(inner_base_size > 0, "inner_base_size");
  if (max_depth > 24) throw std::invalid_argument("MapConfig.max_depth is unreasonably large");
}

}  // namespace diht
