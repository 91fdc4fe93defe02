#include "pmtk/dataset.hpp"

#include <cstdio>
#include <fstream>

#include "pmtk/error.hpp"
#include "pmtk/media.hpp"
#include "pmtk/tnsr.hpp"

namespace pmtk::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05lld.png", static_cast<long long>(n));
  return buf;
}

template <typename T>
T field(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw ValidationError("manifest: missing field " + path + "." + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("manifest: bad field " + path + "." + key + ": " + e.what());
  }
}

void write_masks(const fs::path& path, const RegionMaskSet& m) {
  io::save_tnsr(path, io::TensorRecord::from_f32({static_cast<std::uint64_t>(m.n_frames), 3,
                                                  static_cast<std::uint64_t>(m.height),
                                                  static_cast<std::uint64_t>(m.width)},
                                                 m.values));
}

}  // namespace

bool SampleRecord::is_validation() const {
  auto it = properties.find("split");
  return it != properties.end() && it->second == "val";
}

json Manifest::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["fps"] = fps;
  j["sample_rate"] = sample_rate;
  j["height"] = height;
  j["width"] = width;
  j["joints"] = joints;
  j["dims"] = dims;
  j["views"] = views;
  j["generator"] = generator;
  json arr = json::array();
  for (const auto& s : samples) {
    json r;
    r["id"] = s.id;
    r["n_frames"] = s.n_frames;
    r["audio_samples"] = s.audio_samples;
    r["identity_seed"] = s.identity_seed;
    r["view"] = {{"azimuth", s.view.azimuth}, {"expert_index", s.view.expert_index}};
    r["paths"] = {{"audio", s.audio_path()},
                  {"frames", s.frames_dir()},
                  {"motion", s.motion_path()},
                  {"masks", s.masks_path()},
                  {"skeleton", s.skeleton_path()},
                  {"reference", s.reference_path()},
                  {"reference_masks", s.reference_masks_path()},
                  {"reference_skeleton", s.reference_skeleton_path()}};
    r["properties"] = s.properties;
    arr.push_back(std::move(r));
  }
  j["samples"] = std::move(arr);
  return j;
}

Manifest Manifest::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("manifest: top level must be an object");
  Manifest m;
  m.schema_version = field<int>(j, "schema_version", "manifest");
  if (m.schema_version != kManifestSchemaVersion)
    throw ValidationError("manifest: unsupported schema_version " + std::to_string(m.schema_version));
  m.fps = field<int>(j, "fps", "manifest");
  m.sample_rate = field<int>(j, "sample_rate", "manifest");
  m.height = field<int>(j, "height", "manifest");
  m.width = field<int>(j, "width", "manifest");
  m.joints = field<int>(j, "joints", "manifest");
  m.dims = field<int>(j, "dims", "manifest");
  m.views = field<int>(j, "views", "manifest");
  if (j.contains("generator")) m.generator = j.at("generator");
  const auto& arr = j.at("samples");
  if (!arr.is_array()) throw ValidationError("manifest: samples must be an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "samples[" + std::to_string(i) + "]";
    const auto& r = arr[i];
    SampleRecord s;
    s.id = field<std::string>(r, "id", path);
    s.n_frames = field<std::int64_t>(r, "n_frames", path);
    s.audio_samples = field<std::int64_t>(r, "audio_samples", path);
    s.identity_seed = field<std::uint64_t>(r, "identity_seed", path);
    const auto& v = r.at("view");
    s.view.azimuth = field<double>(v, "azimuth", path + ".view");
    s.view.expert_index = field<int>(v, "expert_index", path + ".view");
    s.view.num_experts = m.views;
    if (s.view.expert_index != nearest_anchor(s.view.azimuth, m.views))
      throw ValidationError("manifest: " + path + ".view.expert_index is not the nearest anchor");
    s.properties = field<std::map<std::string, std::string>>(r, "properties", path);
    if (s.n_frames < 1) throw ValidationError("manifest: " + path + ".n_frames must be >= 1");
    m.samples.push_back(std::move(s));
  }
  return m;
}

json generator_to_json(const GeneratorConfig& c) {
  return {{"seed", c.seed},           {"identities", c.identities}, {"views", c.views},
          {"clips_per_identity", c.clips_per_identity},             {"duration_s", c.duration_s},
          {"fps", c.fps},             {"sample_rate", c.sample_rate}, {"height", c.height},
          {"width", c.width},         {"n_tones", c.n_tones},       {"holdout_every", c.holdout_every}};
}

DatasetWriter::DatasetWriter(fs::path root, Manifest header) : root_(std::move(root)), manifest_(std::move(header)) {
  manifest_.samples.clear();
  fs::create_directories(root_);
}

void DatasetWriter::add(const Sample& s) {
  if (finished_) throw InvalidState("DatasetWriter: add() after finish()");
  s.validate();
  if (s.height != manifest_.height || s.width != manifest_.width || s.motion.fps != manifest_.fps ||
      s.audio.sample_rate != manifest_.sample_rate)
    throw ValidationError(s.id + ": sample geometry does not match the dataset header");

  SampleRecord r;
  r.id = s.id;
  r.n_frames = s.motion.n_frames;
  r.audio_samples = static_cast<std::int64_t>(s.audio.samples.size());
  r.identity_seed = s.identity_seed;
  r.view = s.view;
  r.properties = s.properties;

  const fs::path dir = root_ / s.id;
  fs::create_directories(dir / "frames");
  io::write_wav(root_ / r.audio_path(), s.audio.samples, s.audio.sample_rate);
  const auto n = static_cast<std::uint64_t>(s.motion.n_frames);
  const auto h = static_cast<std::uint64_t>(s.height);
  const auto w = static_cast<std::uint64_t>(s.width);
  io::save_tnsr(root_ / r.motion_path(),
                io::TensorRecord::from_f32({n, static_cast<std::uint64_t>(s.motion.joints),
                                            static_cast<std::uint64_t>(s.motion.dims)},
                                           s.motion.values));
  write_masks(root_ / r.masks_path(), s.masks);
  io::save_tnsr(root_ / r.skeleton_path(), io::TensorRecord::from_u8({n, h, w}, s.skeleton_images));
  const std::size_t frame_bytes = h * w * 3;
  for (std::uint64_t i = 0; i < n; ++i) {
    io::RgbImage img{s.height, s.width,
                     {s.frames.begin() + static_cast<std::ptrdiff_t>(i * frame_bytes),
                      s.frames.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame_bytes)}};
    io::write_png(root_ / r.frames_dir() / frame_name(static_cast<std::int64_t>(i)), img);
  }
  io::write_png(root_ / r.reference_path(), io::RgbImage{s.height, s.width, s.reference.frame});
  write_masks(root_ / r.reference_masks_path(), s.reference.masks);
  io::save_tnsr(root_ / r.reference_skeleton_path(), io::TensorRecord::from_u8({1, h, w}, s.reference.skeleton));
  manifest_.samples.push_back(std::move(r));
}

const Manifest& DatasetWriter::finish() {
  if (!finished_) {
    std::ofstream out(root_ / "manifest.json", std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write manifest in " + root_.string());
    out << manifest_.to_json().dump(2) << '\n';
    finished_ = true;
  }
  return manifest_;
}

namespace {

Manifest header_for(const GeneratorConfig& config) {
  Manifest m;
  m.fps = config.fps;
  m.sample_rate = config.sample_rate;
  m.height = config.height;
  m.width = config.width;
  m.views = config.views;
  m.generator = generator_to_json(config);
  return m;
}

}  // namespace

Manifest write_dataset(const std::vector<Sample>& samples, const fs::path& root, const GeneratorConfig& config) {
  Manifest header = header_for(config);
  if (!samples.empty()) {
    header.height = samples.front().height;
    header.width = samples.front().width;
    header.fps = samples.front().motion.fps;
    header.sample_rate = samples.front().audio.sample_rate;
    header.views = samples.front().view.num_experts;
  }
  DatasetWriter writer(root, std::move(header));
  for (const auto& s : samples) writer.add(s);
  return writer.finish();
}

Manifest generate_dataset(const GeneratorConfig& config, const fs::path& root,
                          const std::function<void(std::size_t, std::size_t)>& progress) {
  config.validate();
  DatasetWriter writer(root, header_for(config));
  const auto total = static_cast<std::size_t>(config.num_clips());
  std::size_t done = 0;
  for (int i = 0; i < config.identities; ++i) {
    for (int c = 0; c < config.clips_per_identity; ++c) {
      writer.add(generate_sample(config, i, c));
      if (progress) progress(++done, total);
    }
  }
  return writer.finish();
}

DatasetReader::DatasetReader(fs::path root) : root_(std::move(root)) {
  const fs::path manifest_path = root_ / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw InvalidArgument("no manifest.json in " + root_.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(manifest_path.string(), e.byte, e.what());
  }
  manifest_ = Manifest::from_json(j);
}

AudioClip DatasetReader::load_audio(std::size_t i) const {
  const auto& r = record(i);
  auto wav = io::read_wav(root_ / r.audio_path());
  if (static_cast<std::int64_t>(wav.samples.size()) != r.audio_samples)
    throw ValidationError(r.id + ": audio length disagrees with manifest");
  return AudioClip{std::move(wav.samples), wav.sample_rate};
}

MotionSequence DatasetReader::load_motion(std::size_t i) const {
  const auto& r = record(i);
  const auto rec = io::load_tnsr(root_ / r.motion_path());
  if (rec.shape.size() != 3 || static_cast<std::int64_t>(rec.shape[0]) != r.n_frames)
    throw ValidationError(r.id + ": motion.tnsr frame count disagrees with manifest n_frames");
  MotionSequence m(r.n_frames, manifest_.fps, static_cast<int>(rec.shape[1]), static_cast<int>(rec.shape[2]));
  m.values = rec.to_f32();
  return m;
}

RegionMaskSet load_masks_file(const fs::path& path) {
  const auto rec = io::load_tnsr(path);
  if (rec.shape.size() != 4 || rec.shape[1] != 3)
    throw ValidationError(path.string() + ": masks must be N x 3 x H x W");
  RegionMaskSet m(static_cast<std::int64_t>(rec.shape[0]), static_cast<int>(rec.shape[2]),
                  static_cast<int>(rec.shape[3]));
  m.values = rec.to_f32();
  return m;
}

void save_masks(const fs::path& path, const RegionMaskSet& masks) { write_masks(path, masks); }

RegionMaskSet DatasetReader::load_masks(std::size_t i) const {
  const auto& r = record(i);
  auto m = load_masks_file(root_ / r.masks_path());
  if (m.n_frames != r.n_frames || m.height != manifest_.height || m.width != manifest_.width)
    throw ValidationError(r.id + ": masks.tnsr shape disagrees with manifest");
  return m;
}

std::vector<std::uint8_t> DatasetReader::load_skeleton(std::size_t i) const {
  const auto& r = record(i);
  const auto rec = io::load_tnsr(root_ / r.skeleton_path());
  if (rec.shape.size() != 3 || static_cast<std::int64_t>(rec.shape[0]) != r.n_frames ||
      rec.shape[1] != static_cast<std::uint64_t>(manifest_.height) ||
      rec.shape[2] != static_cast<std::uint64_t>(manifest_.width))
    throw ValidationError(r.id + ": skeleton.tnsr shape disagrees with manifest");
  return rec.to_u8();
}

std::vector<std::uint8_t> DatasetReader::load_frames(std::size_t i) const {
  const auto& r = record(i);
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(r.n_frames) * manifest_.height * manifest_.width * 3);
  for (std::int64_t n = 0; n < r.n_frames; ++n) {
    const auto img = io::read_png(root_ / r.frames_dir() / frame_name(n));
    if (img.height != manifest_.height || img.width != manifest_.width)
      throw ValidationError(r.id + ": frame " + std::to_string(n) + " has the wrong size");
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  }
  return out;
}

Reference DatasetReader::load_reference(std::size_t i) const {
  const auto& r = record(i);
  Reference ref;
  auto img = io::read_png(root_ / r.reference_path());
  if (img.height != manifest_.height || img.width != manifest_.width)
    throw ValidationError(r.id + ": reference image has the wrong size");
  ref.frame = std::move(img.pixels);
  ref.masks = load_masks_file(root_ / r.reference_masks_path());
  ref.skeleton = io::load_tnsr(root_ / r.reference_skeleton_path()).to_u8();
  return ref;
}

Sample DatasetReader::load(std::size_t i) const {
  const auto& r = record(i);
  Sample s;
  s.id = r.id;
  s.identity_seed = r.identity_seed;
  s.view = r.view;
  s.height = manifest_.height;
  s.width = manifest_.width;
  s.properties = r.properties;
  s.audio = load_audio(i);
  s.motion = load_motion(i);
  s.frames = load_frames(i);
  s.masks = load_masks(i);
  s.skeleton_images = load_skeleton(i);
  s.reference = load_reference(i);
  s.validate();
  return s;
}

std::vector<std::size_t> DatasetReader::split(bool validation) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (record(i).is_validation() == validation) out.push_back(i);
  return out;
}

}  // namespace pmtk::data
