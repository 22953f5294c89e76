#pragma once

// GCK1 checkpoints: named float32 tensors.
//
//   "GCK1" | u32 version = 1 | u32 count |
//   count x ( u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] |
//             float32 data[prod(dims)] )
//
// All integers and floats are little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "selab/tensor.hpp"

namespace selab {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace selab
