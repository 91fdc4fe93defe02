#pragma once

// Checkpoint container.
//
//   "PMTK"  u32 version
//   u32 len, stage tag
//   u64 step
//   u32 len, config hash
//   u32 count, then count x (u32 len key, u32 len value)     metadata, sorted
//   u32 count, then count x (u32 len name, u64 len, TNSR)     tensors, sorted
//
// All integers little-endian. Maps are ordered so equal contents encode to
// equal bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pmtk/tnsr.hpp"

namespace pmtk::ckpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string stage;
  std::uint64_t step = 0;
  std::string config_hash;
  std::map<std::string, std::string> metadata;
  std::map<std::string, io::TensorRecord> tensors;

  const io::TensorRecord& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return tensors.count(name) > 0; }
  const std::string& meta(const std::string& key) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Throws MissingCheckpoint when the file does not exist, FormatError when it
// is malformed, and ConfigError when the stage tag or the config hash do not
// match the expected values (empty expectations are not checked).
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_stage,
                           const std::string& expected_config_hash = {});

}  // namespace pmtk::ckpt
