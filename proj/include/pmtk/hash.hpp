#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace pmtk {

// Hex SHA-1 of "blob <size>\0<content>", the object id git assigns to a file.
std::string git_blob_hash(std::span<const std::uint8_t> content);
std::string git_blob_hash(std::string_view content);

// Content hash of a directory tree: SHA-1 over sorted "relative-path blob-hash"
// lines. Paths whose filename is in `exclude` are skipped.
std::string tree_hash(const std::filesystem::path& root, std::span<const std::string> exclude = {});

// 64-bit FNV-1a, hex encoded. Used for config hashes.
std::string fnv1a_hex(std::string_view data);

// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and a counter. Stage k of a run uses
// derive_seed(global, k); step s inside a stage uses derive_seed(stage, s).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t counter) {
  return mix64(parent ^ mix64(counter + 0x632BE59BD9B4E019ull));
}

}  // namespace pmtk
