#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pmtk/dataset.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/media.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/tnsr.hpp"
#include "test_util.hpp"

using namespace pmtk;
using namespace pmtk::data;

TEST(Audio, LengthAndPeak) {
  auto a = generate_audio(0, 1.0, 1);
  ASSERT_EQ(a.samples.size(), 16000u);
  float peak = 0;
  for (float s : a.samples) peak = std::max(peak, std::abs(s));
  EXPECT_NEAR(peak, 0.9f, 1e-6);
  a.validate();
}

TEST(Audio, DeterministicPerSeed) {
  auto a = generate_audio(0, 1.0, 3);
  auto b = generate_audio(0, 1.0, 3);
  auto c = generate_audio(1, 1.0, 3);
  EXPECT_EQ(a.samples, b.samples);
  double diff = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) diff = std::max(diff, double(std::abs(a.samples[i] - c.samples[i])));
  EXPECT_GT(diff, 0.01);
}

TEST(Audio, ValidateRejectsBadSamples) {
  AudioClip a;
  EXPECT_THROW(a.validate(), InvalidArgument);
  a.samples = {0.1f, std::nanf("")};
  EXPECT_THROW(a.validate(), InvalidArgument);
}

TEST(MotionLaw, SilenceGivesRestPose) {
  AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  auto m = audio_to_motion_law(silent, 5);
  ASSERT_EQ(m.n_frames, 25);
  auto rest = rest_pose(5);
  for (std::int64_t n = 0; n < m.n_frames; ++n)
    for (std::size_t k = 0; k < m.frame_size(); ++k) {
      EXPECT_EQ(m.values[n * m.frame_size() + k], m.values[k]);
      EXPECT_NEAR(m.values[n * m.frame_size() + k], rest.values[k], 1e-6);
    }
}

TEST(MotionLaw, DeterministicAndIdentityDependent) {
  auto a = generate_audio(3, 1.0, 3);
  auto m0 = audio_to_motion_law(a, identity_seed_for({}, 0));
  auto m0b = audio_to_motion_law(a, identity_seed_for({}, 0));
  auto m1 = audio_to_motion_law(a, identity_seed_for({}, 1));
  EXPECT_EQ(m0.values, m0b.values);
  for (std::int64_t n = 0; n < m0.n_frames; ++n) {
    double l1 = 0;
    for (std::size_t k = 0; k < m0.frame_size(); ++k)
      l1 += std::abs(m0.values[n * m0.frame_size() + k] - m1.values[n * m1.frame_size() + k]);
    EXPECT_GT(l1, 0.0) << "frame " << n;
  }
  for (float v : m0.values) EXPECT_LE(std::abs(v), kCoordBound);
}

TEST(MotionLaw, DriveRespondsToAudio) {
  auto a = generate_audio(3, 1.0, 3);
  auto drive = band_drive(a, 25);
  ASSERT_EQ(drive.size(), 25u * 4);
  for (float d : drive) {
    EXPECT_GE(d, 0.0f);
    EXPECT_LT(d, 1.0f);
  }
  EXPECT_GT(*std::max_element(drive.begin(), drive.end()), 0.05f);
}

TEST(Render, RestPoseMasksPartitionUnity) {
  auto r = render_sample(rest_pose(0), ViewLabel::from_azimuth(0.0), 0, 64, 64);
  EXPECT_LE(r.masks.partition_error(), 1e-6);
  ASSERT_EQ(r.frames.size(), 64u * 64 * 3);
  ASSERT_EQ(r.skeleton.size(), 64u * 64);
}

TEST(Render, AzimuthPiMirrorsTheFrame) {
  const int h = 64, w = 64;
  auto a = render_sample(rest_pose(0), ViewLabel::from_azimuth(0.0), 0, h, w);
  auto b = render_sample(rest_pose(0), ViewLabel::from_azimuth(std::numbers::pi), 0, h, w);
  double diff = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        diff += std::abs(int(a.frames[(y * w + x) * 3 + c]) - int(b.frames[(y * w + (w - 1 - x)) * 3 + c]));
  diff /= double(h * w * 3) * 255.0;
  EXPECT_LT(diff, 2.0 / 255.0);
}

TEST(Render, BackgroundDominatesEverySample) {
  GeneratorConfig cfg;
  cfg.identities = 6;
  cfg.duration_s = 0.4;
  for (int i = 0; i < cfg.identities; ++i) {
    auto s = generate_sample(cfg, i, 0);
    s.validate();
    double bg = 0;
    for (std::int64_t n = 0; n < s.masks.n_frames; ++n)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) bg += s.masks.at(n, Region::Background, y, x);
    bg /= double(s.masks.n_frames) * s.height * s.width;
    EXPECT_GE(bg, 0.5) << "identity " << i;
    EXPECT_LE(s.masks.partition_error(), 1e-6);
  }
}

TEST(Views, AnchorsAndWrapping) {
  EXPECT_NEAR(wrap_angle(-0.5), kTwoPi - 0.5, 1e-12);
  EXPECT_NEAR(angular_distance(0.1, kTwoPi - 0.1), 0.2, 1e-12);
  EXPECT_EQ(nearest_anchor(anchor_azimuth(5, 12) + 0.01, 12), 5);
  // Exactly halfway between anchors 0 and 1: lowest index wins.
  EXPECT_EQ(nearest_anchor(kTwoPi / 24, 12), 0);
  auto v = ViewLabel::from_azimuth(kTwoPi + 0.2, 12);
  EXPECT_NEAR(v.azimuth, 0.2, 1e-12);
  EXPECT_EQ(v.expert_index, 0);
}

TEST(Generator, RoundRobinCoversAllAnchors) {
  GeneratorConfig cfg;
  cfg.identities = 12;
  cfg.duration_s = 0.2;
  std::vector<int> seen(12, 0);
  for (int i = 0; i < cfg.identities; ++i) seen[generate_sample(cfg, i, 0).view.expert_index]++;
  for (int k = 0; k < 12; ++k) EXPECT_GT(seen[k], 0) << "anchor " << k;
}

TEST(Dataset, WriteReadRoundTripIsBitwise) {
  test::TempDir dir;
  GeneratorConfig cfg;
  cfg.identities = 3;
  cfg.duration_s = 0.4;
  cfg.height = cfg.width = 32;
  std::vector<Sample> samples;
  for (int i = 0; i < 3; ++i) {
    auto s = generate_sample(cfg, i, 0);
    // Audio is stored as PCM16; quantize so the comparison is exact.
    for (auto& v : s.audio.samples) v = io::quantize_pcm16(v);
    samples.push_back(std::move(s));
  }
  write_dataset(samples, dir.path() / "ds", cfg);
  DatasetReader reader(dir.path() / "ds");
  ASSERT_EQ(reader.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto s = reader.load(i);
    EXPECT_EQ(s.id, samples[i].id);
    EXPECT_EQ(s.audio.samples, samples[i].audio.samples);
    EXPECT_EQ(s.motion.values, samples[i].motion.values);
    EXPECT_EQ(s.frames, samples[i].frames);
    EXPECT_EQ(s.masks.values, samples[i].masks.values);
    EXPECT_EQ(s.skeleton_images, samples[i].skeleton_images);
    EXPECT_EQ(s.reference.frame, samples[i].reference.frame);
    EXPECT_EQ(s.view.expert_index, samples[i].view.expert_index);
  }
}

TEST(Dataset, TruncatedMotionFileIsFormatError) {
  test::TempDir dir;
  GeneratorConfig cfg;
  cfg.identities = 1;
  cfg.duration_s = 0.2;
  cfg.height = cfg.width = 32;
  auto m = generate_dataset(cfg, dir.path());
  const auto path = dir.path() / m.samples[0].motion_path();
  auto bytes = io::read_file(path);
  bytes.resize(bytes.size() - 10);
  io::write_file(path, bytes);
  DatasetReader reader(dir.path());
  EXPECT_THROW(reader.load_motion(0), FormatError);
}

TEST(Dataset, GenerationIsDeterministic) {
  test::TempDir a, b;
  GeneratorConfig cfg;
  cfg.identities = 2;
  cfg.duration_s = 0.2;
  cfg.height = cfg.width = 32;
  generate_dataset(cfg, a.path());
  generate_dataset(cfg, b.path());
  EXPECT_EQ(tree_hash(a.path()), tree_hash(b.path()));
}

TEST(Dataset, ManifestRejectsMissingFields) {
  nlohmann::json j = {{"schema_version", 1}};
  EXPECT_THROW(Manifest::from_json(j), ValidationError);
}
