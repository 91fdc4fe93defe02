#include "pmtk/media.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "pmtk/error.hpp"
#include "pmtk/tnsr.hpp"

namespace pmtk::io {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3)
    throw InvalidArgument("write_png: pixel buffer does not match dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw InvalidArgument("write_png failed for " + path.string() + ": " + img.message);
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError(path.string(), 0, std::string("cannot decode PNG: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(path.string(), 0, std::string("cannot decode PNG: ") + img.message);
  }
  return out;
}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint32_t v, int nbytes) {
  for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le(const std::uint8_t* p, int nbytes) {
  std::uint32_t v = 0;
  for (int i = nbytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

float quantize_pcm16(float sample) {
  const float c = std::clamp(sample, -1.0f, 1.0f);
  return static_cast<float>(static_cast<std::int16_t>(std::lround(c * 32767.0f))) / 32767.0f;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
  tag("RIFF");
  put_le(out, 36 + data_bytes, 4);
  tag("WAVE");
  tag("fmt ");
  put_le(out, 16, 4);
  put_le(out, 1, 2);  // PCM
  put_le(out, 1, 2);  // mono
  put_le(out, static_cast<std::uint32_t>(sample_rate), 4);
  put_le(out, static_cast<std::uint32_t>(sample_rate * 2), 4);
  put_le(out, 2, 2);
  put_le(out, 16, 2);
  tag("data");
  put_le(out, data_bytes, 4);
  for (float s : samples) {
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
    put_le(out, static_cast<std::uint16_t>(q), 2);
  }
  write_file(path, out);
}

WavData read_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string src = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(src, 0, "not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, bits = 0, rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = get_le(bytes.data() + pos + 4, 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError(src, pos, "truncated WAV chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(src, pos, "short fmt chunk");
      if (get_le(bytes.data() + body, 2) != 1) throw FormatError(src, body, "only PCM WAV is supported");
      channels = static_cast<int>(get_le(bytes.data() + body + 2, 2));
      rate = static_cast<int>(get_le(bytes.data() + body + 4, 4));
      bits = static_cast<int>(get_le(bytes.data() + body + 14, 2));
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (bits != 16 || channels < 1) throw FormatError(src, pos, "expected 16-bit PCM with a preceding fmt chunk");
      WavData out;
      out.sample_rate = rate;
      const std::size_t frames = size / (2 * channels);
      out.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        float acc = 0.0f;
        for (int c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(get_le(bytes.data() + body + 2 * (i * channels + c), 2));
          acc += static_cast<float>(raw) / 32767.0f;
        }
        out.samples[i] = acc / static_cast<float>(channels);
      }
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(src, pos, "WAV file has no data chunk");
}

namespace {

std::uint8_t cube_index(const std::uint8_t* rgb) {
  auto level = [](std::uint8_t v) { return static_cast<int>(std::lround(v / 51.0)); };
  return static_cast<std::uint8_t>(level(rgb[0]) * 36 + level(rgb[1]) * 6 + level(rgb[2]));
}

// Variable-width LZW as used by GIF, 8-bit minimum code size.
void lzw_encode(std::span<const std::uint8_t> indices, std::vector<std::uint8_t>& out) {
  constexpr int kMinCodeSize = 8;
  constexpr int kClear = 1 << kMinCodeSize;
  constexpr int kEnd = kClear + 1;
  std::vector<std::uint8_t> packed;
  std::uint32_t bit_buffer = 0;
  int bit_count = 0;
  int code_size = kMinCodeSize + 1;
  auto emit = [&](int code) {
    bit_buffer |= static_cast<std::uint32_t>(code) << bit_count;
    bit_count += code_size;
    while (bit_count >= 8) {
      packed.push_back(static_cast<std::uint8_t>(bit_buffer & 0xff));
      bit_buffer >>= 8;
      bit_count -= 8;
    }
  };

  std::unordered_map<std::uint32_t, int> table;
  int next_code = kEnd + 1;
  emit(kClear);
  int prefix = -1;
  for (std::uint8_t k : indices) {
    if (prefix < 0) {
      prefix = k;
      continue;
    }
    const std::uint32_t key = (static_cast<std::uint32_t>(prefix) << 8) | k;
    if (auto it = table.find(key); it != table.end()) {
      prefix = it->second;
      continue;
    }
    emit(prefix);
    if (next_code < 4096) {
      table.emplace(key, next_code);
      if (next_code == (1 << code_size) && code_size < 12) ++code_size;
      ++next_code;
    } else {
      emit(kClear);
      table.clear();
      next_code = kEnd + 1;
      code_size = kMinCodeSize + 1;
    }
    prefix = k;
  }
  if (prefix >= 0) emit(prefix);
  emit(kEnd);
  if (bit_count > 0) packed.push_back(static_cast<std::uint8_t>(bit_buffer & 0xff));

  out.push_back(kMinCodeSize);
  for (std::size_t i = 0; i < packed.size(); i += 255) {
    const std::size_t n = std::min<std::size_t>(255, packed.size() - i);
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), packed.begin() + static_cast<std::ptrdiff_t>(i),
               packed.begin() + static_cast<std::ptrdiff_t>(i + n));
  }
  out.push_back(0);
}

}  // namespace

void write_gif(const std::filesystem::path& path, std::span<const RgbImage> frames, int delay_centiseconds) {
  if (frames.empty()) throw InvalidArgument("write_gif: no frames");
  const int w = frames.front().width;
  const int h = frames.front().height;
  std::vector<std::uint8_t> out;
  const char* header = "GIF89a";
  out.insert(out.end(), header, header + 6);
  put_le(out, static_cast<std::uint32_t>(w), 2);
  put_le(out, static_cast<std::uint32_t>(h), 2);
  out.push_back(0xF7);  // global colour table, 256 entries
  out.push_back(0);
  out.push_back(0);
  for (int i = 0; i < 256; ++i) {
    const int idx = std::min(i, 215);
    out.push_back(static_cast<std::uint8_t>((idx / 36) * 51));
    out.push_back(static_cast<std::uint8_t>(((idx / 6) % 6) * 51));
    out.push_back(static_cast<std::uint8_t>((idx % 6) * 51));
  }
  // NETSCAPE2.0 loop forever
  const std::uint8_t loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E', '2', '.', '0', 0x03, 0x01, 0x00, 0x00, 0x00};
  out.insert(out.end(), std::begin(loop), std::end(loop));

  std::vector<std::uint8_t> indices(static_cast<std::size_t>(w) * h);
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw InvalidArgument("write_gif: frame size mismatch");
    out.insert(out.end(), {0x21, 0xF9, 0x04, 0x00});
    put_le(out, static_cast<std::uint32_t>(delay_centiseconds), 2);
    out.insert(out.end(), {0x00, 0x00});
    out.push_back(0x2C);
    put_le(out, 0, 2);
    put_le(out, 0, 2);
    put_le(out, static_cast<std::uint32_t>(w), 2);
    put_le(out, static_cast<std::uint32_t>(h), 2);
    out.push_back(0);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = cube_index(f.pixels.data() + 3 * i);
    lzw_encode(indices, out);
  }
  out.push_back(0x3B);
  write_file(path, out);
}

}  // namespace pmtk::io
