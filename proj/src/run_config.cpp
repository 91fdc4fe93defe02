#include "pmtk/run_config.hpp"

#include <fstream>
#include <set>

#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"

namespace pmtk {

using nlohmann::json;

namespace {

// Reads fields from one JSON object, remembering which keys were used so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, std::int64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const std::string& key, int& out) {
    std::int64_t v = out;
    get(key, v);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(field(key), "integer out of range");
    out = static_cast<int>(v);
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<std::int64_t>& out) {
    if (auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
      std::vector<std::int64_t> values;
      for (const auto& e : *v) {
        if (!e.is_number_integer()) throw ConfigError(field(key), "expected an array of integers");
        values.push_back(e.get<std::int64_t>());
      }
      out = std::move(values);
    }
  }
  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const InvalidArgument& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  // Nested object, or nullptr when absent.
  std::optional<Section> child(const std::string& key) {
    if (auto* v = find(key)) return Section(*v, field(key));
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void validated(const std::string& field, F&& check) {
  try {
    check();
  } catch (const InvalidArgument& e) {
    throw ConfigError(field, e.what());
  }
}

void read_data(Section& s, data::GeneratorConfig& c) {
  s.get("seed", c.seed);
  s.get("identities", c.identities);
  s.get("views", c.views);
  s.get("clips_per_identity", c.clips_per_identity);
  s.get("duration_s", c.duration_s);
  s.get("fps", c.fps);
  s.get("sample_rate", c.sample_rate);
  s.get("height", c.height);
  s.get("width", c.width);
  s.get("n_tones", c.n_tones);
  s.get("holdout_every", c.holdout_every);
  s.finish();
}

json data_json(const data::GeneratorConfig& c) {
  return {{"seed", c.seed},       {"identities", c.identities},   {"views", c.views},
          {"clips_per_identity", c.clips_per_identity},           {"duration_s", c.duration_s},
          {"fps", c.fps},         {"sample_rate", c.sample_rate}, {"height", c.height},
          {"width", c.width},     {"n_tones", c.n_tones},         {"holdout_every", c.holdout_every}};
}

void read_audio(Section& s, AudioEncoderConfig& c) {
  s.get("channels", c.channels);
  s.get("conv_channels", c.conv_channels);
  s.get("kernel", c.kernel);
  s.get("stride", c.stride);
  s.get("layers", c.layers);
  s.get("heads", c.heads);
  s.get("freeze", c.freeze);
  s.finish();
}

json audio_json(const AudioEncoderConfig& c) {
  return {{"channels", c.channels}, {"conv_channels", c.conv_channels}, {"kernel", c.kernel},
          {"stride", c.stride},     {"layers", c.layers},               {"heads", c.heads},
          {"freeze", c.freeze}};
}

json vq_model_json(const MotionCodecConfig& c) {
  return {{"codebook_size", c.codebook_size}, {"code_dim", c.code_dim}, {"hidden", c.hidden},
          {"downsample", c.downsample},       {"beta", c.beta}};
}

json bridge_json(const BridgeConfig& c) {
  return {{"width", c.width},
          {"layers", c.layers},
          {"heads", c.heads},
          {"use_lora", c.use_lora},
          {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
          {"two_argument", c.two_argument}};
}

json motion_model_json(const RunConfig& r) {
  return {{"width", r.denoiser.width},
          {"blocks", r.denoiser.blocks},
          {"heads", r.denoiser.heads},
          {"use_bridge", r.denoiser.use_bridge},
          {"cross_radius", r.denoiser.cross_radius},
          {"diffusion_steps", r.motion_diffusion_steps},
          {"loss_norm", to_string(r.motion_loss_norm)},
          {"space", to_string(r.motion_space)}};
}

json mask_vae_model_json(const MaskVaeConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"base_channels", c.base_channels},
          {"kl_weight", c.kl_weight},
          {"identity_pair_rate", c.identity_pair_rate}};
}

json renderer_model_json(const RendererConfig& c) {
  return {{"latent_channels", c.latent_channels},
          {"ae_channels", c.ae_channels},
          {"width_high", c.width_high},
          {"width_low", c.width_low},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"tau", c.tau},
          {"view_embed_dim", c.view_embed_dim},
          {"window", c.window},
          {"diffusion_steps", c.diffusion_steps},
          {"view_combine", to_string(c.view_combine)},
          {"view_moe_in_denoiser", c.view_moe_in_denoiser},
          {"loss_norm", to_string(c.loss_norm)}};
}

}  // namespace

void MetricsConfig::validate() const {
  if (eval_clips < 2 || diversity_pairs < 1 || sample_frames < 1)
    throw InvalidArgument("metrics need eval_clips >= 2, diversity_pairs >= 1 and sample_frames >= 1");
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig r;
  Section root(j, "");
  if (!root.find("schema_version")) throw ConfigError("schema_version", "missing");
  root.get("schema_version", r.schema_version);
  if (r.schema_version != kRunConfigSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(r.schema_version) + ", expected " +
                                            std::to_string(kRunConfigSchemaVersion));
  root.get("seed", r.seed);
  root.get("output_dir", r.output_dir);
  if (auto s = root.child("data")) read_data(*s, r.data);
  if (auto s = root.child("audio")) read_audio(*s, r.audio);
  if (auto s = root.child("vq")) {
    s->get("codebook_size", r.vq.codebook_size);
    s->get("code_dim", r.vq.code_dim);
    s->get("hidden", r.vq.hidden);
    s->get("downsample", r.vq.downsample);
    s->get("beta", r.vq.beta);
    if (auto t = s->child("train")) {
      t->get("steps", r.vq_train.steps);
      t->get("batch", r.vq_train.batch);
      t->get("lr", r.vq_train.lr);
      t->get("window", r.vq_train.window);
      t->get("dead_code_steps", r.vq_train.dead_code_steps);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.child("bridge")) {
    s->get("width", r.bridge.width);
    s->get("layers", r.bridge.layers);
    s->get("heads", r.bridge.heads);
    s->get("use_lora", r.bridge.use_lora);
    s->get("two_argument", r.bridge.two_argument);
    if (auto l = s->child("lora")) {
      l->get("rank", r.bridge.lora.rank);
      l->get("alpha", r.bridge.lora.alpha);
      l->finish();
    }
    s->finish();
  }
  if (auto s = root.child("motion_diffusion")) {
    s->get("width", r.denoiser.width);
    s->get("blocks", r.denoiser.blocks);
    s->get("heads", r.denoiser.heads);
    s->get("use_bridge", r.denoiser.use_bridge);
    s->get("cross_radius", r.denoiser.cross_radius);
    s->get("diffusion_steps", r.motion_diffusion_steps);
    s->get_enum("loss_norm", r.motion_loss_norm, loss_norm_from_string);
    s->get_enum("space", r.motion_space, diffusion_space_from_string);
    if (auto t = s->child("train")) {
      t->get("steps", r.motion_train.steps);
      t->get("batch", r.motion_train.batch);
      t->get("lr", r.motion_train.lr);
      t->get("window", r.motion_train.window);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.child("mask_vae")) {
    s->get("latent_dim", r.mask_vae.latent_dim);
    s->get("base_channels", r.mask_vae.base_channels);
    s->get("kl_weight", r.mask_vae.kl_weight);
    s->get("identity_pair_rate", r.mask_vae.identity_pair_rate);
    if (auto t = s->child("train")) {
      t->get("steps", r.mask_vae_train.steps);
      t->get("batch", r.mask_vae_train.batch);
      t->get("lr", r.mask_vae_train.lr);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.child("renderer")) {
    auto& c = r.renderer;
    s->get("latent_channels", c.latent_channels);
    s->get("ae_channels", c.ae_channels);
    s->get("width_high", c.width_high);
    s->get("width_low", c.width_low);
    s->get("heads", c.heads);
    s->get("ffn_mult", c.ffn_mult);
    s->get("tau", c.tau);
    s->get("view_embed_dim", c.view_embed_dim);
    s->get("window", c.window);
    s->get("diffusion_steps", c.diffusion_steps);
    s->get_enum("view_combine", c.view_combine, view_combine_from_string);
    s->get("view_moe_in_denoiser", c.view_moe_in_denoiser);
    s->get_enum("loss_norm", c.loss_norm, loss_norm_from_string);
    if (auto t = s->child("train")) {
      auto& tc = r.renderer_train;
      t->get("ae_steps", tc.ae_steps);
      t->get("phase1_steps", tc.phase1_steps);
      t->get("phase2_steps", tc.phase2_steps);
      t->get("batch_windows", tc.batch_windows);
      t->get("ae_lr", tc.ae_lr);
      t->get("lr", tc.lr);
      t->get("val_windows", tc.val_windows);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.child("metrics")) {
    s->get("eval_clips", r.metrics.eval_clips);
    s->get("diversity_pairs", r.metrics.diversity_pairs);
    s->get("sample_frames", r.metrics.sample_frames);
    s->finish();
  }
  root.finish();
  r.sync_shapes();
  r.validate();
  return r;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  validated("data", [&] { data.validate(); });
  validated("audio", [&] { audio.validate(); });
  validated("vq", [&] { vq.validate(); });
  validated("vq.train", [&] { vq_train.validate(); });
  validated("bridge", [&] { bridge.validate(); });
  validated("motion_diffusion", [&] { motion_model(); });
  validated("motion_diffusion.train", [&] { motion_train.validate(); });
  validated("mask_vae", [&] { mask_vae.validate(); });
  validated("mask_vae.train", [&] { mask_vae_train.validate(); });
  validated("renderer", [&] { renderer.validate(); });
  validated("renderer.train", [&] { renderer_train.validate(); });
  validated("metrics", [&] { metrics.validate(); });
  const auto frames = data::frames_for_samples(static_cast<std::size_t>(data.duration_s * data.sample_rate),
                                               data.sample_rate, data.fps);
  if (data.sample_rate % data.fps != 0) throw ConfigError("data.sample_rate", "must be a multiple of fps");
  if (vq_train.window > frames) throw ConfigError("vq.train.window", "longer than a clip");
  if (motion_train.window > frames) throw ConfigError("motion_diffusion.train.window", "longer than a clip");
  if (renderer.window > frames) throw ConfigError("renderer.window", "longer than a clip");
  if (renderer.height != data.height || renderer.width != data.width)
    throw ConfigError("renderer", "image size must match data.height x data.width");
  if (renderer.num_views != data.views) throw ConfigError("renderer", "view count must match data.views");
}

void RunConfig::sync_shapes() {
  mask_vae.height = renderer.height = data.height;
  mask_vae.width = renderer.width = data.width;
  renderer.num_views = data.views;
  vq.pose_dim = data::kJoints * data::kDims;
}

MotionModelConfig RunConfig::motion_model() const {
  MotionModelConfig m;
  m.audio = audio;
  m.bridge = bridge;
  m.denoiser = denoiser;
  m.codec = vq;
  m.diffusion_steps = motion_diffusion_steps;
  m.loss_norm = motion_loss_norm;
  m.space = motion_space;
  m.sample_rate = data.sample_rate;
  m.fps = data.fps;
  m.finalize();
  return m;
}

json RunConfig::to_json() const {
  json vq_j = vq_model_json(vq);
  vq_j["train"] = {{"steps", vq_train.steps},
                   {"batch", vq_train.batch},
                   {"lr", vq_train.lr},
                   {"window", vq_train.window},
                   {"dead_code_steps", vq_train.dead_code_steps}};
  json md = motion_model_json(*this);
  md["train"] = {{"steps", motion_train.steps},
                 {"batch", motion_train.batch},
                 {"lr", motion_train.lr},
                 {"window", motion_train.window}};
  json mv = mask_vae_model_json(mask_vae);
  mv["train"] = {{"steps", mask_vae_train.steps}, {"batch", mask_vae_train.batch}, {"lr", mask_vae_train.lr}};
  json rd = renderer_model_json(renderer);
  rd["train"] = {{"ae_steps", renderer_train.ae_steps},         {"phase1_steps", renderer_train.phase1_steps},
                 {"phase2_steps", renderer_train.phase2_steps}, {"batch_windows", renderer_train.batch_windows},
                 {"ae_lr", renderer_train.ae_lr},               {"lr", renderer_train.lr},
                 {"val_windows", renderer_train.val_windows}};
  return {{"schema_version", schema_version},
          {"seed", seed},
          {"output_dir", output_dir},
          {"data", data_json(data)},
          {"audio", audio_json(audio)},
          {"vq", vq_j},
          {"bridge", bridge_json(bridge)},
          {"motion_diffusion", md},
          {"mask_vae", mv},
          {"renderer", rd},
          {"metrics",
           {{"eval_clips", metrics.eval_clips},
            {"diversity_pairs", metrics.diversity_pairs},
            {"sample_frames", metrics.sample_frames}}}};
}

std::string RunConfig::stage_hash(const std::string& name) const {
  json j;
  const json shape = {{"fps", data.fps}, {"sample_rate", data.sample_rate}, {"height", data.height},
                      {"width", data.width}, {"views", data.views}};
  if (name == stage::kVq) {
    j = {{"vq", vq_model_json(vq)}};
  } else if (name == stage::kMotion) {
    j = {{"audio", audio_json(audio)}, {"bridge", bridge_json(bridge)}, {"motion", motion_model_json(*this)},
         {"shape", shape}};
    if (motion_space == DiffusionSpace::VqLatent) j["vq"] = vq_model_json(vq);
  } else if (name == stage::kMaskVae) {
    j = {{"mask_vae", mask_vae_model_json(mask_vae)}, {"shape", shape}};
  } else if (name == stage::kRenderer) {
    j = {{"renderer", renderer_model_json(renderer)}, {"shape", shape}};
  } else {
    throw InvalidArgument("unknown stage '" + name + "'");
  }
  j["stage"] = name;
  return fnv1a_hex(j.dump());
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

std::uint64_t RunConfig::stage_seed(const std::string& name) const {
  static const char* order[] = {"data", stage::kVq, stage::kMotion, stage::kMaskVae, stage::kRenderer, "sample", "eval"};
  for (std::uint64_t i = 0; i < std::size(order); ++i)
    if (name == order[i]) return derive_seed(seed, i);
  throw InvalidArgument("unknown stage '" + name + "'");
}

}  // namespace pmtk
