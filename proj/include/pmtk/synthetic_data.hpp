#pragma once

// Procedural audio / motion / frame / mask tuples with a known audio->motion
// law. Everything here is a pure function of its seeds.

#include <array>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace pmtk::data {

inline constexpr int kJoints = 8;
inline constexpr int kDims = 2;
inline constexpr int kDefaultSampleRate = 16000;
inline constexpr int kDefaultFps = 25;
inline constexpr int kDefaultViews = 12;
inline constexpr float kCoordBound = 1.5f;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum Joint : int { kHead = 0, kNeck, kLShoulder, kLElbow, kLWrist, kRShoulder, kRElbow, kRWrist };

enum class Region : int { Face = 0, Body = 1, Background = 2 };

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
  // Throws InvalidArgument on empty, non-finite or out-of-range samples.
  void validate() const;
};

// N x J x D joint coordinates, row-major.
struct MotionSequence {
  std::int64_t n_frames = 0;
  int joints = kJoints;
  int dims = kDims;
  int fps = kDefaultFps;
  std::vector<float> values;

  MotionSequence() = default;
  MotionSequence(std::int64_t n, int fps_, int joints_ = kJoints, int dims_ = kDims)
      : n_frames(n), joints(joints_), dims(dims_), fps(fps_),
        values(static_cast<std::size_t>(n) * joints_ * dims_, 0.0f) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(joints) * dims; }
  float& at(std::int64_t n, int j, int d) { return values[n * frame_size() + j * dims + d]; }
  float at(std::int64_t n, int j, int d) const { return values[n * frame_size() + j * dims + d]; }
  void validate() const;
};

struct ViewLabel {
  double azimuth = 0.0;  // radians in [0, 2pi)
  int expert_index = 0;
  int num_experts = kDefaultViews;

  // Wraps the azimuth into [0, 2pi) and assigns the nearest anchor.
  static ViewLabel from_azimuth(double azimuth, int num_experts = kDefaultViews);
};

double wrap_angle(double azimuth);
// min(|a-b|, 2pi-|a-b|) for wrapped angles.
double angular_distance(double a, double b);
double anchor_azimuth(int k, int num_experts);
// Nearest anchor; ties go to the lowest index.
int nearest_anchor(double azimuth, int num_experts);

// Soft region masks, N x 3 x H x W, channel order face, body, background.
struct RegionMaskSet {
  std::int64_t n_frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  RegionMaskSet() = default;
  RegionMaskSet(std::int64_t n, int h, int w)
      : n_frames(n), height(h), width(w), values(static_cast<std::size_t>(n) * 3 * h * w, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(std::int64_t n, Region r, int y, int x) {
    return values[(n * 3 + static_cast<int>(r)) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  float at(std::int64_t n, Region r, int y, int x) const {
    return values[(n * 3 + static_cast<int>(r)) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  // max over pixels of |face + body + background - 1|.
  double partition_error() const;
};

// Per-identity body proportions, rest pose, audio gains and colours.
struct Identity {
  std::uint64_t seed = 0;
  float scale = 1.0f;
  float head_length = 0.24f;
  float shoulder_half = 0.22f;
  float upper_arm = 0.30f;
  float forearm = 0.26f;
  float torso_length = 0.55f;
  // left shoulder, left elbow, right shoulder, right elbow, head tilt
  std::array<float, 5> rest_angles{};
  std::array<float, 5> gains{};
  std::array<std::uint8_t, 3> skin{};
  std::array<std::uint8_t, 3> shirt{};
  std::array<std::uint8_t, 3> background{};

  static Identity from_seed(std::uint64_t seed);
  std::map<std::string, std::string> properties() const;
};

struct Rendered {
  std::vector<std::uint8_t> frames;    // N x H x W x 3
  RegionMaskSet masks;                 // N x 3 x H x W
  std::vector<std::uint8_t> skeleton;  // N x H x W, 0 or 255
};

struct Reference {
  std::vector<std::uint8_t> frame;     // H x W x 3
  RegionMaskSet masks;                 // 1 x 3 x H x W
  std::vector<std::uint8_t> skeleton;  // H x W
};

struct Sample {
  std::string id;
  std::uint64_t identity_seed = 0;
  AudioClip audio;
  MotionSequence motion;
  ViewLabel view;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> frames;
  RegionMaskSet masks;
  std::vector<std::uint8_t> skeleton_images;
  Reference reference;
  std::map<std::string, std::string> properties;

  // Checks array sizes and the audio/motion alignment contract.
  void validate() const;
};

// Sum of `n_tones` amplitude-modulated sinusoids peak-normalised to 0.9.
AudioClip generate_audio(std::uint64_t seed, double duration_s, int n_tones,
                         int sample_rate = kDefaultSampleRate);

// Number of motion frames paired with `n_samples` of audio.
std::int64_t frames_for_samples(std::size_t n_samples, int sample_rate, int fps);

// Per-frame log-spaced band energies (4 bands, 5-frame moving average),
// squashed to [0, 1). Row-major N x 4.
std::vector<float> band_drive(const AudioClip& audio, int fps);

MotionSequence audio_to_motion_law(const AudioClip& audio, std::uint64_t identity_seed, int fps = kDefaultFps);

// Rest pose of an identity (zero audio drive), one frame.
MotionSequence rest_pose(std::uint64_t identity_seed, int fps = kDefaultFps);

// Orthographic render of the chain rotated by `view.azimuth` about the
// vertical axis. H and W must be >= 32 and multiples of 8.
Rendered render_sample(const MotionSequence& motion, const ViewLabel& view, std::uint64_t identity_seed, int height,
                       int width);

// Skeleton raster only (no identity needed); N x H x W, values 0 or 255.
std::vector<std::uint8_t> rasterize_skeleton(const MotionSequence& motion, double azimuth, int height, int width);

struct GeneratorConfig {
  std::uint64_t seed = 0;
  int identities = 64;
  int views = kDefaultViews;
  int clips_per_identity = 1;
  double duration_s = 2.0;
  int fps = kDefaultFps;
  int sample_rate = kDefaultSampleRate;
  int height = 64;
  int width = 64;
  int n_tones = 3;
  // Identities with index % holdout_every == holdout_every - 1 form the
  // validation split.
  int holdout_every = 8;

  void validate() const;
  int num_clips() const { return identities * clips_per_identity; }
};

// Clip `clip` of identity `identity`. Anchor views are assigned round-robin
// across clips so every anchor is covered once num_clips() >= views.
Sample generate_sample(const GeneratorConfig& config, int identity, int clip);

std::uint64_t identity_seed_for(const GeneratorConfig& config, int identity);

}  // namespace pmtk::data
