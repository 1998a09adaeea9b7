#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "d3pcqa/net/tensor.hpp"

namespace d3pcqa {

/// Generic checkpoint container: free-form JSON metadata plus named tensors.
///
/// File layout (all integers little-endian):
///   8 bytes   magic "D3PCQACK"
///   u32       format version
///   u64       header length
///   header    UTF-8 JSON {"meta": ..., "tensors": [{name, shape, offset}]}
///   payload   float64 values, tensors back to back
///   u32       CRC-32 of header and payload
struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, net::Tensor> tensors;

  friend bool operator==(const CheckpointData&, const CheckpointData&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const CheckpointData& data);
/// Throws CheckpointError on bad magic, version mismatch, truncation or a
/// checksum mismatch.
CheckpointData decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace d3pcqa
