#pragma once

#include <map>
#include <string>

#include "spg/tensor.hpp"

namespace spg {

// Versioned binary tensor container. Layout, all integers little-endian:
//   magic "SPG2" | u32 version | u32 count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank]
//               | f32 payload[numel]
// Round-trips bit-exactly.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

} // namespace spg
