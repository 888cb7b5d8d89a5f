#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bcdet/tensor.hpp"

namespace bcdet {

// Flat binary weight container, bit-exact across platforms.
// Layout: magic "TYLF", format version u32, then one record per tensor:
// name length u32, UTF-8 name, rank u32, dims u32 each, values as 64-bit
// little-endian doubles. All integers little-endian.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(
    const std::string& path);

}  // namespace bcdet
