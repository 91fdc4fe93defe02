#include "pmtk/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/media.hpp"

namespace pmtk::data {

namespace {

constexpr int kBands = 4;
constexpr double kBandLow = 80.0;
constexpr double kBandHigh = 4000.0;
constexpr int kSmoothFrames = 5;
constexpr float kMouthStretch = 0.25f;
constexpr float kSpineLength = 0.45f;
// Depth of each joint out of the image plane; gives side views some extent.
constexpr std::array<float, kJoints> kJointDepth = {0.03f, 0.0f, 0.0f, 0.12f, 0.22f, 0.0f, 0.12f, 0.22f};
constexpr float kNeckY = 0.25f;

struct Vec2 {
  float x, y;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(float s, Vec2 a) { return {s * a.x, s * a.y}; }

float length(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

float segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const Vec2 ap = p - a;
  const float denom = ab.x * ab.x + ab.y * ab.y;
  const float t = denom > 0.0f ? std::clamp((ap.x * ab.x + ap.y * ab.y) / denom, 0.0f, 1.0f) : 0.0f;
  return length(p - (a + t * ab));
}

std::array<double, kBands + 1> band_edges(int sample_rate) {
  const double high = std::min(kBandHigh, 0.45 * sample_rate);
  std::array<double, kBands + 1> edges{};
  for (int k = 0; k <= kBands; ++k) edges[k] = kBandLow * std::pow(high / kBandLow, static_cast<double>(k) / kBands);
  return edges;
}

// RBJ constant-peak band-pass biquad.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  Biquad(double center, double q, int sample_rate) {
    const double w0 = kTwoPi * center / sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0 = alpha / a0;
    b1 = 0.0;
    b2 = -alpha / a0;
    a1 = -2.0 * std::cos(w0) / a0;
    a2 = (1.0 - alpha) / a0;
  }

  double step(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

std::array<Vec2, kJoints> pose_from_drive(const Identity& id, const float* drive) {
  const float s = id.scale;
  const auto& r = id.rest_angles;
  const auto& g = id.gains;
  const float mouth = 0.5f * (drive[1] + drive[2]);
  const float tilt = r[4] + 0.35f * g[4] * (drive[0] - drive[3]);
  const float ls = r[0] + g[0] * drive[0] + 0.5f * g[1] * drive[1];
  const float le = r[1] + g[1] * drive[1];
  const float rs = r[2] + g[2] * drive[2] + 0.5f * g[3] * drive[3];
  const float re = r[3] + g[3] * drive[3];

  std::array<Vec2, kJoints> p{};
  p[kNeck] = {0.0f, kNeckY};
  const float head_len = id.head_length * s * (1.0f + kMouthStretch * mouth);
  p[kHead] = p[kNeck] + head_len * Vec2{std::sin(tilt), std::cos(tilt)};
  p[kLShoulder] = p[kNeck] + Vec2{-id.shoulder_half * s, -0.04f * s};
  p[kRShoulder] = p[kNeck] + Vec2{id.shoulder_half * s, -0.04f * s};
  p[kLElbow] = p[kLShoulder] + (id.upper_arm * s) * Vec2{-std::sin(ls), -std::cos(ls)};
  p[kLWrist] = p[kLElbow] + (id.forearm * s) * Vec2{-std::sin(ls + le), -std::cos(ls + le)};
  p[kRElbow] = p[kRShoulder] + (id.upper_arm * s) * Vec2{std::sin(rs), -std::cos(rs)};
  p[kRWrist] = p[kRElbow] + (id.forearm * s) * Vec2{std::sin(rs + re), -std::cos(rs + re)};
  for (auto& q : p) {
    q.x = std::clamp(q.x, -kCoordBound, kCoordBound);
    q.y = std::clamp(q.y, -kCoordBound, kCoordBound);
  }
  return p;
}

// Projected joint positions for frame n, plus the spine end.
struct Projected {
  std::array<Vec2, kJoints> joints;
  Vec2 hip;
};

Projected project_frame(const MotionSequence& m, std::int64_t n, double azimuth, float torso_length) {
  const float c = static_cast<float>(std::cos(azimuth));
  const float s = static_cast<float>(std::sin(azimuth));
  Projected out{};
  for (int j = 0; j < kJoints; ++j) {
    const float x = m.at(n, j, 0);
    const float y = m.at(n, j, 1);
    out.joints[j] = {x * c + kJointDepth[j] * s, y};
  }
  out.hip = out.joints[kNeck] + Vec2{0.0f, -torso_length};
  return out;
}

float coverage(float radius, float dist, float pixel) { return std::clamp((radius - dist) / pixel + 0.5f, 0.0f, 1.0f); }

void check_raster_size(int height, int width) {
  if (height < 32 || width < 32 || height % 8 != 0 || width % 8 != 0)
    throw InvalidArgument("render size must be >= 32 and a multiple of 8, got " + std::to_string(height) + "x" +
                          std::to_string(width));
}

void draw_line(std::uint8_t* img, int h, int w, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h) img[static_cast<std::size_t>(y0) * w + x0] = 255;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

std::string hex_colour(const std::array<std::uint8_t, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

}  // namespace

void AudioClip::validate() const {
  if (samples.empty()) throw InvalidArgument("audio clip is empty");
  if (sample_rate <= 0) throw InvalidArgument("audio sample rate must be positive");
  for (float s : samples)
    if (!std::isfinite(s) || std::abs(s) > 1.0f) throw InvalidArgument("audio samples must be finite and within [-1, 1]");
}

void MotionSequence::validate() const {
  if (n_frames < 1) throw InvalidArgument("motion sequence needs at least one frame");
  if (values.size() != static_cast<std::size_t>(n_frames) * frame_size())
    throw InvalidArgument("motion sequence value count does not match its shape");
  for (float v : values)
    if (!std::isfinite(v) || std::abs(v) > kCoordBound)
      throw InvalidArgument("motion coordinates must be finite and within [-1.5, 1.5]");
}

double wrap_angle(double azimuth) {
  double a = std::fmod(azimuth, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

double angular_distance(double a, double b) {
  const double d = std::abs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, kTwoPi - d);
}

double anchor_azimuth(int k, int num_experts) { return kTwoPi * k / num_experts; }

int nearest_anchor(double azimuth, int num_experts) {
  if (num_experts < 1) throw InvalidArgument("need at least one view expert");
  int best = 0;
  double best_d = angular_distance(azimuth, anchor_azimuth(0, num_experts));
  for (int k = 1; k < num_experts; ++k) {
    const double d = angular_distance(azimuth, anchor_azimuth(k, num_experts));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ViewLabel ViewLabel::from_azimuth(double azimuth, int num_experts) {
  const double a = wrap_angle(azimuth);
  return {a, nearest_anchor(a, num_experts), num_experts};
}

double RegionMaskSet::partition_error() const {
  double worst = 0.0;
  const std::size_t hw = plane();
  for (std::int64_t n = 0; n < n_frames; ++n) {
    const float* f = values.data() + n * 3 * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double sum = static_cast<double>(f[i]) + f[hw + i] + f[2 * hw + i];
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return worst;
}

Identity Identity::from_seed(std::uint64_t seed) {
  std::mt19937_64 rng(mix64(seed ^ 0x1D3A7EULL));
  auto uni = [&](float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); };
  auto byte = [&](int lo, int hi) { return static_cast<std::uint8_t>(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  Identity id;
  id.seed = seed;
  id.scale = uni(0.85f, 1.1f);
  id.shoulder_half = uni(0.18f, 0.24f);
  id.upper_arm = uni(0.26f, 0.32f);
  id.forearm = uni(0.22f, 0.28f);
  id.torso_length = uni(0.5f, 0.6f);
  id.rest_angles = {uni(0.15f, 0.45f), uni(0.1f, 0.5f), uni(0.15f, 0.45f), uni(0.1f, 0.5f), uni(-0.08f, 0.08f)};
  for (auto& g : id.gains) g = uni(0.8f, 1.6f);
  id.skin = {byte(170, 240), byte(120, 190), byte(90, 160)};
  id.shirt = {byte(20, 150), byte(20, 150), byte(20, 150)};
  const auto grey = byte(205, 240);
  id.background = {grey, static_cast<std::uint8_t>(grey - byte(0, 10)), static_cast<std::uint8_t>(grey - byte(0, 10))};
  return id;
}

std::map<std::string, std::string> Identity::properties() const {
  char scale_buf[32];
  std::snprintf(scale_buf, sizeof scale_buf, "%.4f", scale);
  return {{"identity_seed", std::to_string(seed)},
          {"scale", scale_buf},
          {"skin", hex_colour(skin)},
          {"shirt", hex_colour(shirt)},
          {"background", hex_colour(background)}};
}

void Sample::validate() const {
  audio.validate();
  motion.validate();
  const auto n = static_cast<std::size_t>(motion.n_frames);
  const auto hw = static_cast<std::size_t>(height) * width;
  if (frames.size() != n * hw * 3) throw ValidationError(id + ": frame array does not match N x H x W x 3");
  if (masks.n_frames != motion.n_frames || masks.height != height || masks.width != width)
    throw ValidationError(id + ": mask array does not match N x 3 x H x W");
  if (skeleton_images.size() != n * hw) throw ValidationError(id + ": skeleton array does not match N x H x W");
  const double expected = std::round(audio.duration_s() * motion.fps);
  if (std::abs(static_cast<double>(motion.n_frames) - expected) > 1.0)
    throw ValidationError(id + ": audio duration and motion length disagree");
}

AudioClip generate_audio(std::uint64_t seed, double duration_s, int n_tones, int sample_rate) {
  if (!(duration_s > 0.0)) throw InvalidArgument("generate_audio: duration must be positive");
  if (n_tones < 1) throw InvalidArgument("generate_audio: need at least one tone");
  if (sample_rate <= 0) throw InvalidArgument("generate_audio: sample rate must be positive");
  const auto length = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (length == 0) throw InvalidArgument("generate_audio: duration shorter than one sample");

  std::mt19937_64 rng(mix64(seed));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto edges = band_edges(sample_rate);
  const int first_band = std::uniform_int_distribution<int>(0, kBands - 1)(rng);

  std::vector<double> acc(length, 0.0);
  for (int k = 0; k < n_tones; ++k) {
    // Spread tones over distinct bands; keep away from band edges.
    const int band = (first_band + k) % kBands;
    const double lo = std::log(edges[band]) + 0.2 * std::log(edges[band + 1] / edges[band]);
    const double hi = std::log(edges[band + 1]) - 0.2 * std::log(edges[band + 1] / edges[band]);
    const double freq = std::exp(uni(lo, hi));
    const double phase = uni(0.0, kTwoPi);
    const double am_rate = uni(0.8, 4.0);
    const double am_phase = uni(0.0, kTwoPi);
    const double amp = uni(0.5, 1.0);
    for (std::size_t i = 0; i < length; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      const double env = std::pow(std::max(0.0, std::sin(kTwoPi * am_rate * t + am_phase)), 1.5);
      acc[i] += amp * env * std::sin(kTwoPi * freq * t + phase);
    }
  }
  double peak = 0.0;
  for (double v : acc) peak = std::max(peak, std::abs(v));
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(length);
  const double gain = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < length; ++i) clip.samples[i] = static_cast<float>(acc[i] * gain);
  return clip;
}

std::int64_t frames_for_samples(std::size_t n_samples, int sample_rate, int fps) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(n_samples) * fps / sample_rate));
}

std::vector<float> band_drive(const AudioClip& audio, int fps) {
  audio.validate();
  if (fps <= 0) throw InvalidArgument("band_drive: fps must be positive");
  const std::int64_t n_frames = frames_for_samples(audio.samples.size(), audio.sample_rate, fps);
  const double hop = static_cast<double>(audio.sample_rate) / fps;
  const auto edges = band_edges(audio.sample_rate);

  std::vector<float> energy(static_cast<std::size_t>(n_frames) * kBands, 0.0f);
  for (int b = 0; b < kBands; ++b) {
    const double center = std::sqrt(edges[b] * edges[b + 1]);
    Biquad filter(center, center / (edges[b + 1] - edges[b]), audio.sample_rate);
    std::vector<double> filtered(audio.samples.size());
    for (std::size_t i = 0; i < audio.samples.size(); ++i) filtered[i] = filter.step(audio.samples[i]);
    float previous = 0.0f;
    for (std::int64_t n = 0; n < n_frames; ++n) {
      const auto begin = static_cast<std::size_t>(std::llround(n * hop));
      const auto end = std::min(filtered.size(), static_cast<std::size_t>(std::llround((n + 1) * hop)));
      if (begin < end) {
        double sq = 0.0;
        for (std::size_t i = begin; i < end; ++i) sq += filtered[i] * filtered[i];
        previous = static_cast<float>(std::sqrt(sq / static_cast<double>(end - begin)));
      }
      energy[n * kBands + b] = previous;
    }
  }

  std::vector<float> drive(energy.size());
  const int half = kSmoothFrames / 2;
  for (std::int64_t n = 0; n < n_frames; ++n) {
    for (int b = 0; b < kBands; ++b) {
      float sum = 0.0f;
      for (int k = -half; k <= half; ++k) {
        const std::int64_t m = std::clamp<std::int64_t>(n + k, 0, n_frames - 1);
        sum += energy[m * kBands + b];
      }
      drive[n * kBands + b] = std::tanh(4.0f * sum / kSmoothFrames);
    }
  }
  return drive;
}

MotionSequence audio_to_motion_law(const AudioClip& audio, std::uint64_t identity_seed, int fps) {
  const auto drive = band_drive(audio, fps);
  const auto id = Identity::from_seed(identity_seed);
  const auto n_frames = static_cast<std::int64_t>(drive.size() / kBands);
  MotionSequence motion(n_frames, fps);
  for (std::int64_t n = 0; n < n_frames; ++n) {
    const auto pose = pose_from_drive(id, drive.data() + n * kBands);
    for (int j = 0; j < kJoints; ++j) {
      motion.at(n, j, 0) = pose[j].x;
      motion.at(n, j, 1) = pose[j].y;
    }
  }
  return motion;
}

MotionSequence rest_pose(std::uint64_t identity_seed, int fps) {
  const auto id = Identity::from_seed(identity_seed);
  const float zero[kBands] = {0, 0, 0, 0};
  const auto pose = pose_from_drive(id, zero);
  MotionSequence motion(1, fps);
  for (int j = 0; j < kJoints; ++j) {
    motion.at(0, j, 0) = pose[j].x;
    motion.at(0, j, 1) = pose[j].y;
  }
  return motion;
}

Rendered render_sample(const MotionSequence& motion, const ViewLabel& view, std::uint64_t identity_seed, int height,
                       int width) {
  check_raster_size(height, width);
  motion.validate();
  if (motion.joints != kJoints || motion.dims != kDims) throw InvalidArgument("render_sample expects an 8 x 2 chain");
  const auto id = Identity::from_seed(identity_seed);
  const float s = id.scale;
  const float pixel = 2.0f / static_cast<float>(std::min(height, width));
  const std::int64_t n_frames = motion.n_frames;
  const std::size_t hw = static_cast<std::size_t>(height) * width;

  Rendered out;
  out.frames.assign(static_cast<std::size_t>(n_frames) * hw * 3, 0);
  out.masks = RegionMaskSet(n_frames, height, width);
  out.skeleton = rasterize_skeleton(motion, view.azimuth, height, width);

  for (std::int64_t n = 0; n < n_frames; ++n) {
    const auto pr = project_frame(motion, n, view.azimuth, id.torso_length * s);
    const auto& p = pr.joints;
    const float head_len = length(Vec2{motion.at(n, kHead, 0) - motion.at(n, kNeck, 0),
                                       motion.at(n, kHead, 1) - motion.at(n, kNeck, 1)});
    const float mouth = std::clamp((head_len / (id.head_length * s) - 1.0f) / kMouthStretch, 0.0f, 1.0f);
    const float face_radius = 0.11f * s * (1.0f + 0.3f * mouth);

    struct Stroke {
      Vec2 a, b;
      float half_width;
    };
    const Stroke strokes[] = {
        {p[kNeck], pr.hip, 0.11f * s},           {p[kNeck], p[kHead], 0.035f * s},
        {p[kLShoulder], p[kRShoulder], 0.06f * s}, {p[kLShoulder], p[kLElbow], 0.045f * s},
        {p[kLElbow], p[kLWrist], 0.04f * s},     {p[kRShoulder], p[kRElbow], 0.045f * s},
        {p[kRElbow], p[kRWrist], 0.04f * s},
    };

    for (int r = 0; r < height; ++r) {
      const float v = 1.0f - (static_cast<float>(r) + 0.5f) * 2.0f / static_cast<float>(height);
      for (int c = 0; c < width; ++c) {
        const float u = (static_cast<float>(c) + 0.5f) * 2.0f / static_cast<float>(width) - 1.0f;
        const Vec2 q{u, v};
        const float face = coverage(face_radius, length(q - p[kHead]), pixel);
        float body = 0.0f;
        for (const auto& st : strokes) body = std::max(body, coverage(st.half_width, segment_distance(q, st.a, st.b), pixel));
        body = std::min(body, 1.0f - face);
        const float background = 1.0f - face - body;
        out.masks.at(n, Region::Face, r, c) = face;
        out.masks.at(n, Region::Body, r, c) = body;
        out.masks.at(n, Region::Background, r, c) = background;
        std::uint8_t* px = out.frames.data() + (static_cast<std::size_t>(n) * hw + static_cast<std::size_t>(r) * width + c) * 3;
        for (int ch = 0; ch < 3; ++ch) {
          const float value = face * id.skin[ch] + body * id.shirt[ch] + background * id.background[ch];
          px[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
        }
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> rasterize_skeleton(const MotionSequence& motion, double azimuth, int height, int width) {
  check_raster_size(height, width);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(motion.n_frames) * hw, 0);
  auto to_px = [&](Vec2 p) {
    return std::pair<int, int>{static_cast<int>(std::lround((p.x + 1.0f) * 0.5f * width - 0.5f)),
                               static_cast<int>(std::lround((1.0f - p.y) * 0.5f * height - 0.5f))};
  };
  constexpr std::pair<int, int> kBones[] = {{kHead, kNeck},         {kNeck, kLShoulder},   {kLShoulder, kLElbow},
                                            {kLElbow, kLWrist},     {kNeck, kRShoulder},   {kRShoulder, kRElbow},
                                            {kRElbow, kRWrist}};
  for (std::int64_t n = 0; n < motion.n_frames; ++n) {
    const auto pr = project_frame(motion, n, azimuth, kSpineLength);
    std::uint8_t* img = out.data() + static_cast<std::size_t>(n) * hw;
    for (const auto& [a, b] : kBones) {
      const auto [x0, y0] = to_px(pr.joints[a]);
      const auto [x1, y1] = to_px(pr.joints[b]);
      draw_line(img, height, width, x0, y0, x1, y1);
    }
    const auto [nx, ny] = to_px(pr.joints[kNeck]);
    const auto [hx, hy] = to_px(pr.hip);
    draw_line(img, height, width, nx, ny, hx, hy);
  }
  return out;
}

void GeneratorConfig::validate() const {
  if (identities < 1) throw InvalidArgument("identities must be >= 1");
  if (views < 1) throw InvalidArgument("views must be >= 1");
  if (clips_per_identity < 1) throw InvalidArgument("clips_per_identity must be >= 1");
  if (!(duration_s > 0.0)) throw InvalidArgument("duration_s must be positive");
  if (fps < 1 || sample_rate < 1) throw InvalidArgument("fps and sample_rate must be positive");
  if (n_tones < 1) throw InvalidArgument("n_tones must be >= 1");
  if (holdout_every < 1) throw InvalidArgument("holdout_every must be >= 1");
  check_raster_size(height, width);
}

std::uint64_t identity_seed_for(const GeneratorConfig& config, int identity) {
  return derive_seed(config.seed ^ 0x1DE7ULL, static_cast<std::uint64_t>(identity)) >> 16;
}

Sample generate_sample(const GeneratorConfig& config, int identity, int clip) {
  config.validate();
  if (identity < 0 || identity >= config.identities || clip < 0 || clip >= config.clips_per_identity)
    throw InvalidArgument("generate_sample: identity or clip index out of range");
  const std::uint64_t clip_counter = static_cast<std::uint64_t>(identity) * config.clips_per_identity + clip;
  const std::uint64_t clip_seed = derive_seed(config.seed, clip_counter);
  std::mt19937_64 rng(clip_seed);

  Sample s;
  char id_buf[32];
  std::snprintf(id_buf, sizeof id_buf, "id%04d_c%02d", identity, clip);
  s.id = id_buf;
  s.identity_seed = identity_seed_for(config, identity);
  s.height = config.height;
  s.width = config.width;

  const int anchor = static_cast<int>(clip_counter % static_cast<std::uint64_t>(config.views));
  const double jitter = std::uniform_real_distribution<double>(-0.35, 0.35)(rng) * std::numbers::pi / config.views;
  s.view = ViewLabel::from_azimuth(anchor_azimuth(anchor, config.views) + jitter, config.views);

  s.audio = generate_audio(derive_seed(clip_seed, 1), config.duration_s, config.n_tones, config.sample_rate);
  for (auto& v : s.audio.samples) v = io::quantize_pcm16(v);
  s.motion = audio_to_motion_law(s.audio, s.identity_seed, config.fps);

  auto rendered = render_sample(s.motion, s.view, s.identity_seed, config.height, config.width);
  s.frames = std::move(rendered.frames);
  s.masks = std::move(rendered.masks);
  s.skeleton_images = std::move(rendered.skeleton);

  auto ref = render_sample(rest_pose(s.identity_seed, config.fps), ViewLabel::from_azimuth(0.0, config.views),
                           s.identity_seed, config.height, config.width);
  s.reference = {std::move(ref.frames), std::move(ref.masks), std::move(ref.skeleton)};

  s.properties = Identity::from_seed(s.identity_seed).properties();
  s.properties["identity_index"] = std::to_string(identity);
  s.properties["split"] = identity % config.holdout_every == config.holdout_every - 1 ? "val" : "train";
  return s;
}

}  // namespace pmtk::data
