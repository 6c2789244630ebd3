#pragma once

#include <map>
#include <string>

#include "idfe/tensor.hpp"

namespace idfe {

// Checkpoint container for named tensors.
//
// Layout (little-endian):
//   magic "IDFC" stored as 4 ASCII chars + NUL (5 bytes)
//   format version  u32 (currently 1)
//   records, one per tensor, in ascending name order:
//     name length    u32
//     name bytes     (no terminator)
//     rank           u32
//     extents        u32 x rank
//     payload        f32 x numel, row-major
//
// Round trips are bit-exact: the payload is written from and read back into
// 32-bit storage untouched.
void save_checkpoint(const std::string& path, const std::map<std::string, TensorF>& tensors);
std::map<std::string, TensorF> load_checkpoint(const std::string& path);

}  // namespace idfe
