#include "pmtk/checkpoint.hpp"

#include <cstring>

#include "pmtk/error.hpp"

namespace pmtk::ckpt {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'T', 'K'};

template <typename T>
void put_int(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_int<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get_int(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(const char* what) {
    const auto len = get_int<std::uint32_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_, pos_, what); }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const io::TensorRecord& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidState("checkpoint '" + stage + "' has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw InvalidState("checkpoint '" + stage + "' has no metadata '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_int<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, checkpoint.stage);
  put_int<std::uint64_t>(out, checkpoint.step);
  put_string(out, checkpoint.config_hash);
  put_int<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [k, v] : checkpoint.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_int<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, record] : checkpoint.tensors) {
    put_string(out, name);
    auto blob = io::encode_tnsr(record);
    put_int<std::uint64_t>(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  auto magic = r.get_bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError(source, 0, "bad magic, expected PMTK");
  const auto version = r.get_int<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw FormatError(source, 4, "unsupported version " + std::to_string(version));
  Checkpoint c;
  c.stage = r.get_string("stage");
  c.step = r.get_int<std::uint64_t>("step");
  c.config_hash = r.get_string("config hash");
  const auto n_meta = r.get_int<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string("metadata key");
    c.metadata[k] = r.get_string("metadata value");
  }
  const auto n_tensors = r.get_int<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_string("tensor name");
    const auto len = r.get_int<std::uint64_t>("tensor length");
    const auto offset = r.pos();
    auto blob = r.get_bytes(len, "tensor payload");
    std::size_t used = 0;
    c.tensors[name] = io::decode_tnsr(blob, source, offset, &used);
    if (used != blob.size()) throw FormatError(source, offset + used, "trailing bytes in tensor '" + name + "'");
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  auto bytes = encode_checkpoint(checkpoint);
  // Write then rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_stage,
                           const std::string& expected_config_hash) {
  if (!std::filesystem::exists(path)) throw MissingCheckpoint(expected_stage, path.string());
  auto bytes = io::read_file(path);
  auto c = decode_checkpoint(bytes, path.string());
  if (!expected_stage.empty() && c.stage != expected_stage)
    throw ConfigError("stage", "checkpoint " + path.string() + " holds stage '" + c.stage + "', expected '" +
                                   expected_stage + "'");
  if (!expected_config_hash.empty() && c.config_hash != expected_config_hash)
    throw ConfigError(expected_stage, "config hash " + expected_config_hash + " does not match checkpoint hash " +
                                          c.config_hash + " in " + path.string());
  return c;
}

}  // namespace pmtk::ckpt
