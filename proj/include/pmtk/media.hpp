#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pmtk::io {

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // H x W x 3, row-major
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

// Mono PCM16 WAV. Samples are clamped to [-1, 1] and scaled by 32767.
void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate);

struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};

// Reads PCM16 mono or stereo (channels averaged).
WavData read_wav(const std::filesystem::path& path);

// Value on the PCM16 grid that write_wav/read_wav reproduce exactly.
float quantize_pcm16(float sample);

// Animated GIF with a fixed 6x6x6 colour cube palette.
void write_gif(const std::filesystem::path& path, std::span<const RgbImage> frames, int delay_centiseconds);

}  // namespace pmtk::io
