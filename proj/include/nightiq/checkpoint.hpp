#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "nightiq/nn.hpp"

namespace nightiq {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct ModelCheckpoint {
  std::uint32_t format_version = kCheckpointFormatVersion;
  NamedArrays parameter_map;
  std::string config_snapshot;  // key = value lines
  std::uint64_t rng_seed = 0;
};

// Binary layout (little-endian):
//   "NIQCKPT\0" | u32 version | u64 seed | u32 len, config bytes | u32 count
//   count x { u32 len, name bytes | i32 n, c, h, w | f64 values[n*c*h*w] }
//   u32 crc32 of every preceding byte
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// In-memory encode/decode of the same layout.
std::string encode_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint decode_checkpoint(const std::string& bytes);

}  // namespace nightiq
