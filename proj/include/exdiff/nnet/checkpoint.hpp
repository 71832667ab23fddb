#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exdiff/nnet/tensor.hpp"

namespace exdiff::nnet {

inline constexpr char kCheckpointMagic[4] = {'E', 'X', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Binary layout (little-endian):
///   "EXDF" | u32 version | u32 parameter count | u32 header length | header JSON bytes
///   parameter records | u32 EMA record count | EMA records
/// record = u32 name length | name | u32 rank | u32 dims[rank] | f32 values.
struct CheckpointData {
  std::string header_json;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> ema;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace exdiff::nnet
