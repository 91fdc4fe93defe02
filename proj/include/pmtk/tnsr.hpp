#pragma once

// TNSR: the binary tensor container used for motion, masks, skeleton rasters
// and checkpoint parameters.
//
//   offset 0   "TNSR"             magic
//          4   u8  version = 1
//          5   u8  dtype           0 = f32, 1 = u8
//          6   u8  ndim
//          7   u8  padding = 0
//          8   ndim x u64 LE       shape
//          ... row-major payload   (f32 little-endian)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pmtk::io {

enum class DType : std::uint8_t { F32 = 0, U8 = 1 };

inline constexpr std::uint8_t kTnsrVersion = 1;

std::size_t dtype_size(DType dtype);

// Untyped tensor record. `payload` holds exactly numel() * dtype_size bytes.
struct TensorRecord {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;

  std::uint64_t numel() const;

  static TensorRecord from_f32(std::vector<std::uint64_t> shape, std::span<const float> values);
  static TensorRecord from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values);

  // Throw InvalidArgument when the dtype does not match.
  std::vector<float> to_f32() const;
  std::vector<std::uint8_t> to_u8() const;
};

std::vector<std::uint8_t> encode_tnsr(const TensorRecord& record);

// Decode one record from the front of `bytes`. `source` names the file in
// error messages and `base_offset` is added to reported offsets so records
// embedded in larger files point at the right byte. When `consumed` is
// non-null it receives the number of bytes read.
TensorRecord decode_tnsr(std::span<const std::uint8_t> bytes, const std::string& source,
                         std::size_t base_offset = 0, std::size_t* consumed = nullptr);

void save_tnsr(const std::filesystem::path& path, const TensorRecord& record);
TensorRecord load_tnsr(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pmtk::io
