#pragma once

// On-disk dataset layout:
//   root/manifest.json
//   root/<id>/audio.wav              PCM16 mono
//   root/<id>/frames/%05d.png
//   root/<id>/motion.tnsr            f32 N x J x D
//   root/<id>/masks.tnsr             f32 N x 3 x H x W
//   root/<id>/skeleton.tnsr          u8  N x H x W
//   root/<id>/reference.png          rest pose, azimuth 0
//   root/<id>/reference_masks.tnsr   f32 1 x 3 x H x W
//   root/<id>/reference_skeleton.tnsr u8 1 x H x W

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmtk/synthetic_data.hpp"

namespace pmtk::data {

inline constexpr int kManifestSchemaVersion = 1;

struct SampleRecord {
  std::string id;
  std::int64_t n_frames = 0;
  std::int64_t audio_samples = 0;
  std::uint64_t identity_seed = 0;
  ViewLabel view;
  std::map<std::string, std::string> properties;

  std::string audio_path() const { return id + "/audio.wav"; }
  std::string frames_dir() const { return id + "/frames"; }
  std::string motion_path() const { return id + "/motion.tnsr"; }
  std::string masks_path() const { return id + "/masks.tnsr"; }
  std::string skeleton_path() const { return id + "/skeleton.tnsr"; }
  std::string reference_path() const { return id + "/reference.png"; }
  std::string reference_masks_path() const { return id + "/reference_masks.tnsr"; }
  std::string reference_skeleton_path() const { return id + "/reference_skeleton.tnsr"; }
  bool is_validation() const;
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  int fps = kDefaultFps;
  int sample_rate = kDefaultSampleRate;
  int height = 64;
  int width = 64;
  int joints = kJoints;
  int dims = kDims;
  int views = kDefaultViews;
  nlohmann::json generator = nlohmann::json::object();
  std::vector<SampleRecord> samples;

  nlohmann::json to_json() const;
  // Throws ValidationError naming the offending field.
  static Manifest from_json(const nlohmann::json& j);
};

nlohmann::json generator_to_json(const GeneratorConfig& config);

// Streams samples to disk; the manifest is written by finish().
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path root, Manifest header);

  void add(const Sample& sample);
  const Manifest& finish();

 private:
  std::filesystem::path root_;
  Manifest manifest_;
  bool finished_ = false;
};

Manifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root,
                       const GeneratorConfig& config = {});

// Generates and writes every clip of `config`, one at a time.
Manifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& root,
                          const std::function<void(std::size_t, std::size_t)>& progress = {});

// Lazy reader: only the manifest is parsed at construction. Loaders are const
// and touch no shared mutable state, so one reader may serve many threads.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path root);

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const { return manifest_.samples.size(); }
  const SampleRecord& record(std::size_t i) const { return manifest_.samples.at(i); }

  AudioClip load_audio(std::size_t i) const;
  MotionSequence load_motion(std::size_t i) const;
  RegionMaskSet load_masks(std::size_t i) const;
  std::vector<std::uint8_t> load_skeleton(std::size_t i) const;
  std::vector<std::uint8_t> load_frames(std::size_t i) const;
  Reference load_reference(std::size_t i) const;
  Sample load(std::size_t i) const;

  // Indices of the train or validation split.
  std::vector<std::size_t> split(bool validation) const;

 private:
  std::filesystem::path root_;
  Manifest manifest_;
};

// Mask set I/O shared by the dataset and the CLI.
void save_masks(const std::filesystem::path& path, const RegionMaskSet& masks);
RegionMaskSet load_masks_file(const std::filesystem::path& path);

}  // namespace pmtk::data
