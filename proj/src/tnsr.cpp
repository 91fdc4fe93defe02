#include "pmtk/tnsr.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pmtk/error.hpp"

static_assert(std::endian::native == std::endian::little, "TNSR payloads assume a little-endian host");

namespace pmtk::io {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::size_t kHeaderFixed = 8;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::F32:
      return 4;
    case DType::U8:
      return 1;
  }
  throw InvalidArgument("unknown dtype");
}

std::uint64_t TensorRecord::numel() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

TensorRecord TensorRecord::from_f32(std::vector<std::uint64_t> shape, std::span<const float> values) {
  TensorRecord r{DType::F32, std::move(shape), {}};
  if (r.numel() != values.size()) throw InvalidArgument("from_f32: shape does not match value count");
  r.payload.resize(values.size() * 4);
  if (!values.empty()) std::memcpy(r.payload.data(), values.data(), r.payload.size());
  return r;
}

TensorRecord TensorRecord::from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values) {
  TensorRecord r{DType::U8, std::move(shape), {}};
  if (r.numel() != values.size()) throw InvalidArgument("from_u8: shape does not match value count");
  r.payload.assign(values.begin(), values.end());
  return r;
}

std::vector<float> TensorRecord::to_f32() const {
  if (dtype != DType::F32) throw InvalidArgument("tensor record is not f32");
  std::vector<float> out(numel());
  if (!out.empty()) std::memcpy(out.data(), payload.data(), out.size() * 4);
  return out;
}

std::vector<std::uint8_t> TensorRecord::to_u8() const {
  if (dtype != DType::U8) throw InvalidArgument("tensor record is not u8");
  return payload;
}

std::vector<std::uint8_t> encode_tnsr(const TensorRecord& record) {
  if (record.shape.size() > 255) throw InvalidArgument("TNSR supports at most 255 dimensions");
  if (record.payload.size() != record.numel() * dtype_size(record.dtype))
    throw InvalidArgument("TNSR payload size does not match shape");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderFixed + 8 * record.shape.size() + record.payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kTnsrVersion);
  out.push_back(static_cast<std::uint8_t>(record.dtype));
  out.push_back(static_cast<std::uint8_t>(record.shape.size()));
  out.push_back(0);
  for (auto d : record.shape) put_u64(out, d);
  out.insert(out.end(), record.payload.begin(), record.payload.end());
  return out;
}

TensorRecord decode_tnsr(std::span<const std::uint8_t> bytes, const std::string& source,
                         std::size_t base_offset, std::size_t* consumed) {
  if (bytes.size() < kHeaderFixed)
    throw FormatError(source, base_offset + bytes.size(), "truncated TNSR header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(source, base_offset, "bad TNSR magic");
  if (bytes[4] != kTnsrVersion)
    throw FormatError(source, base_offset + 4, "unsupported TNSR version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw FormatError(source, base_offset + 5, "unknown dtype code " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw FormatError(source, base_offset + 7, "nonzero padding byte");

  TensorRecord r;
  r.dtype = static_cast<DType>(bytes[5]);
  const std::size_t ndim = bytes[6];
  const std::size_t shape_end = kHeaderFixed + 8 * ndim;
  if (bytes.size() < shape_end) throw FormatError(source, base_offset + bytes.size(), "truncated TNSR shape");
  r.shape.resize(ndim);
  std::uint64_t numel = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    r.shape[i] = get_u64(bytes.data() + kHeaderFixed + 8 * i);
    if (r.shape[i] != 0 && numel > (std::uint64_t{1} << 40) / r.shape[i])
      throw FormatError(source, base_offset + kHeaderFixed + 8 * i, "implausible TNSR shape");
    numel *= r.shape[i];
  }
  const std::uint64_t nbytes = numel * dtype_size(r.dtype);
  if (bytes.size() - shape_end < nbytes)
    throw FormatError(source, base_offset + bytes.size(),
                      "truncated TNSR payload: expected " + std::to_string(nbytes) + " bytes, found " +
                          std::to_string(bytes.size() - shape_end));
  r.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(shape_end),
                   bytes.begin() + static_cast<std::ptrdiff_t>(shape_end + nbytes));
  if (consumed) *consumed = shape_end + nbytes;
  return r;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("write failed for " + path.string());
}

void save_tnsr(const std::filesystem::path& path, const TensorRecord& record) {
  write_file(path, encode_tnsr(record));
}

TensorRecord load_tnsr(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t used = 0;
  auto rec = decode_tnsr(bytes, path.string(), 0, &used);
  if (used != bytes.size()) throw FormatError(path.string(), used, "trailing bytes after TNSR payload");
  return rec;
}

}  // namespace pmtk::io
