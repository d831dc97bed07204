#pragma once

#include <string>
#include <utility>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

// Named tensors in file order. Binary layout: magic "MPRN", u32 version = 1,
// u32 tensor count, then per tensor: u32 name length, UTF-8 name, u8 rank,
// u64 extents, little-endian 64-bit reals.
using TensorMap = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

const Tensor& find_tensor(const TensorMap& map, const std::string& name);

}  // namespace prunekit
