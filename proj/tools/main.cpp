// pmtk command line: dataset generation, per-stage training, sampling,
// evaluation and export. Exit codes: 0 ok, 1 other failure, 2 invalid
// configuration or arguments, 3 missing checkpoint, 4 training divergence.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <unistd.h>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/media.hpp"
#include "pmtk/run_config.hpp"
#include "pmtk/stages.hpp"
#include "pmtk/tnsr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kDiverged = 4 };

void log_line(const std::string& line) { std::cerr << line << std::endl; }

// One command per workdir. The lock records the owner pid; a lock whose
// owner is gone is taken over.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".pmtk.lock") {
    fs::create_directories(workdir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid());
        if (::write(fd, pid.data(), pid.size()) < 0) {
          ::close(fd);
          throw std::runtime_error("cannot write lock file " + path_.string());
        }
        ::close(fd);
        held_ = true;
        return;
      }
      std::ifstream in(path_);
      long owner = 0;
      in >> owner;
      if (owner > 0 && ::kill(static_cast<pid_t>(owner), 0) == 0)
        throw std::runtime_error("workdir " + workdir.string() + " is locked by running process " +
                                 std::to_string(owner));
      fs::remove(path_);
    }
    throw std::runtime_error("cannot acquire lock " + path_.string());
  }
  ~WorkdirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

std::string utc_now() {
  const auto t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string file_hash(const fs::path& p) {
  const auto bytes = pmtk::io::read_file(p);
  return pmtk::git_blob_hash(std::span<const std::uint8_t>(bytes));
}

struct Globals {
  std::string config_path;
  std::string workdir;
};

struct Context {
  pmtk::RunConfig config;
  fs::path workdir;
};

// --config wins; otherwise the config saved in the workdir by gen-data;
// otherwise the built-in defaults.
Context resolve(const Globals& g) {
  Context ctx;
  if (!g.config_path.empty()) {
    ctx.config = pmtk::RunConfig::load(g.config_path);
    ctx.workdir = g.workdir.empty() ? fs::path(ctx.config.output_dir) : fs::path(g.workdir);
    return ctx;
  }
  ctx.workdir = g.workdir.empty() ? fs::path(ctx.config.output_dir) : fs::path(g.workdir);
  if (fs::exists(ctx.workdir / "config.json")) ctx.config = pmtk::RunConfig::load(ctx.workdir / "config.json");
  return ctx;
}

void save_config(const Context& ctx) {
  fs::create_directories(ctx.workdir);
  std::ofstream(ctx.workdir / "config.json") << ctx.config.to_json().dump(2) << "\n";
}

// run.json holds the latest run; runs.jsonl keeps every run.
void record_run(const fs::path& workdir, json record) {
  fs::create_directories(workdir);
  std::ofstream(workdir / "run.json") << record.dump(2) << "\n";
  std::ofstream(workdir / "runs.jsonl", std::ios::app) << record.dump() << "\n";
}

// Upper-cased long name with PMTK_ prefix: --save-every -> PMTK_SAVE_EVERY.
void add_env_overrides(CLI::App& app) {
  for (auto* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    std::string env = "PMTK_";
    for (char c : names.front()) env += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    opt->envname(env);
    opt->description(opt->get_description() + " [env " + env + "]");
  }
  for (auto* sub : app.get_subcommands({})) add_env_overrides(*sub);
}

std::vector<pmtk::io::RgbImage> read_frames(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw pmtk::InvalidArgument("no PNG frames in " + dir.string());
  std::vector<pmtk::io::RgbImage> frames;
  for (const auto& f : files) frames.push_back(pmtk::io::read_png(f));
  return frames;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(std::max(1, static_cast<int>(std::thread::hardware_concurrency())));
  CLI::App app{"pmtk: audio-driven multi-view talking-figure pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Globals g;
  app.add_option("--config", g.config_path, "Run config JSON (default: <workdir>/config.json, else built-ins)");
  app.add_option("--workdir", g.workdir, "Output directory (default: config output_dir)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset into <workdir>/data");
  std::optional<int> identities, views, clips_per_identity;
  std::optional<std::uint64_t> data_seed;
  std::optional<double> duration;
  gen->add_option("--identities", identities, "Number of identities");
  gen->add_option("--views", views, "Number of anchor views");
  gen->add_option("--clips-per-identity", clips_per_identity, "Clips per identity");
  gen->add_option("--duration", duration, "Clip length in seconds");
  gen->add_option("--seed", data_seed, "Dataset seed");

  // training
  struct TrainFlags {
    std::optional<std::int64_t> steps;
    std::int64_t save_every = 0;
    bool fresh = false;
    std::optional<std::uint64_t> seed;
  };
  TrainFlags tf;
  std::string phase = "both";
  auto add_train_flags = [&](CLI::App* sub, bool with_steps) {
    if (with_steps) sub->add_option("--steps", tf.steps, "Total training steps (overrides the config)");
    sub->add_option("--save-every", tf.save_every, "Also checkpoint every N steps");
    sub->add_flag("--fresh", tf.fresh, "Ignore an existing checkpoint");
    sub->add_option("--seed", tf.seed, "Run seed (overrides the config)");
  };
  auto* tvq = app.add_subcommand("train-vq", "Train the motion VQ-VAE");
  add_train_flags(tvq, true);
  auto* tmo = app.add_subcommand("train-motion", "Train the audio-to-motion diffusion model");
  add_train_flags(tmo, true);
  auto* tmv = app.add_subcommand("train-mask-vae", "Train the region-mask VAE");
  add_train_flags(tmv, true);
  auto* tre = app.add_subcommand("train-renderer", "Train the renderer (autoencoder, phase 1, phase 2)");
  add_train_flags(tre, false);
  tre->add_option("--phase", phase, "Which phase to run")->check(CLI::IsMember({"1", "2", "both"}));

  // sample
  auto* smp = app.add_subcommand("sample", "Generate a video from audio and a reference image");
  std::string audio_path, ref_path, out_dir, gif_path;
  double azimuth = 0.0;
  std::int64_t frames = 0;
  std::uint64_t sample_seed = 0;
  smp->add_option("--audio", audio_path, "Input WAV (mono or stereo PCM16)")->required()->check(CLI::ExistingFile);
  smp->add_option("--ref", ref_path, "Reference PNG")->required()->check(CLI::ExistingFile);
  smp->add_option("--azimuth", azimuth, "Viewpoint in degrees");
  smp->add_option("--frames", frames, "Frames to generate (default: audio length)")->check(CLI::NonNegativeNumber);
  smp->add_option("--out", out_dir, "Output directory (default: <workdir>/samples/latest)");
  smp->add_option("--gif", gif_path, "Also write an animated GIF");
  smp->add_option("--seed", sample_seed, "Sampling seed");

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate every trained stage on the validation split");

  // export
  auto* exp = app.add_subcommand("export", "Export sampled frames");
  std::string frames_dir;
  int export_fps = 0;
  exp->add_option("--gif", gif_path, "Output GIF path")->required();
  exp->add_option("--frames-dir", frames_dir, "Directory of PNG frames (default: <workdir>/samples/latest/frames)");
  exp->add_option("--fps", export_fps, "Playback rate (default: dataset fps)");

  auto* shc = app.add_subcommand("show-config", "Print the effective run config");

  add_env_overrides(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  const auto t0 = std::chrono::steady_clock::now();
  json record = {{"started_at", utc_now()}};
  std::vector<std::string> args(argv, argv + argc);
  record["argv"] = args;
  std::optional<fs::path> workdir;
  int code = kOk;
  try {
    auto ctx = resolve(g);
    workdir = ctx.workdir;
    auto* sub = app.get_subcommands().front();
    record["command"] = sub->get_name();

    if (sub == shc) {
      std::cout << ctx.config.to_json().dump(2) << std::endl;
      return kOk;
    }

    WorkdirLock lock(ctx.workdir);
    auto& cfg = ctx.config;
    pmtk::stages::StageOptions so;
    so.steps = tf.steps;
    so.save_every = tf.save_every;
    so.fresh = tf.fresh;
    so.log = log_line;
    if (tf.seed) cfg.seed = *tf.seed;
    auto input_hash = [&] {
      pmtk::stages::open_dataset(ctx.workdir);
      return pmtk::tree_hash(pmtk::stages::dataset_path(ctx.workdir));
    };
    json result;

    if (sub == gen) {
      if (identities) cfg.data.identities = *identities;
      if (views) cfg.data.views = *views;
      if (clips_per_identity) cfg.data.clips_per_identity = *clips_per_identity;
      if (duration) cfg.data.duration_s = *duration;
      if (data_seed) cfg.data.seed = *data_seed;
      cfg.sync_shapes();
      cfg.validate();
      // The generator's only input is its config.
      record["input_hash"] = pmtk::git_blob_hash(cfg.to_json().dump());
      const auto root = pmtk::stages::dataset_path(ctx.workdir);
      if (fs::exists(root)) {
        if (!fs::exists(root / "manifest.json") && !fs::is_empty(root))
          throw pmtk::ConfigError("workdir", root.string() + " exists and is not a dataset; refusing to overwrite");
        fs::remove_all(root);
      }
      pmtk::data::generate_dataset(cfg.data, root, [](std::size_t done, std::size_t total) {
        if (done == total || done % 16 == 0) log_line("gen-data " + std::to_string(done) + "/" + std::to_string(total));
      });
      save_config(ctx);
      const auto h = pmtk::tree_hash(root);
      result = {{"dataset_hash", h}, {"clips", cfg.data.num_clips()}};
      std::cout << "dataset hash " << h << std::endl;
    } else if (sub == tvq) {
      record["input_hash"] = input_hash();
      record["stage_hash"] = cfg.stage_hash(pmtk::stage::kVq);
      result = pmtk::stages::train_vq_stage(cfg, ctx.workdir, so);
    } else if (sub == tmo) {
      record["input_hash"] = input_hash();
      record["stage_hash"] = cfg.stage_hash(pmtk::stage::kMotion);
      result = pmtk::stages::train_motion_stage(cfg, ctx.workdir, so);
    } else if (sub == tmv) {
      record["input_hash"] = input_hash();
      record["stage_hash"] = cfg.stage_hash(pmtk::stage::kMaskVae);
      result = pmtk::stages::train_mask_vae_stage(cfg, ctx.workdir, so);
    } else if (sub == tre) {
      record["input_hash"] = input_hash();
      record["stage_hash"] = cfg.stage_hash(pmtk::stage::kRenderer);
      result = pmtk::stages::train_renderer_stage(cfg, ctx.workdir, pmtk::stages::render_phase_from_string(phase), so);
    } else if (sub == smp) {
      pmtk::stages::SampleRequest rq;
      const auto wav = pmtk::io::read_wav(audio_path);
      rq.audio.samples = wav.samples;
      rq.audio.sample_rate = wav.sample_rate;
      rq.reference_png = ref_path;
      rq.azimuth_deg = azimuth;
      rq.frames = frames;
      rq.seed = sample_seed;
      record["input_hash"] = pmtk::fnv1a_hex(file_hash(audio_path) + file_hash(ref_path));
      const auto res = pmtk::stages::sample_video(cfg, ctx.workdir, rq);
      const fs::path out = out_dir.empty() ? ctx.workdir / "samples" / "latest" : fs::path(out_dir);
      pmtk::stages::write_sample(res, out);
      if (!gif_path.empty()) pmtk::io::write_gif(gif_path, read_frames(out / "frames"), 100 / cfg.data.fps);
      result = {{"frames", res.motion.n_frames}, {"out", out.string()}};
      std::cout << "wrote " << res.motion.n_frames << " frames to " << out.string() << std::endl;
    } else if (sub == evl) {
      record["input_hash"] = input_hash();
      result = pmtk::stages::evaluate(cfg, ctx.workdir, log_line);
      std::ofstream(ctx.workdir / "eval.json") << result.dump(2) << "\n";
      std::cout << result.dump(2) << std::endl;
    } else if (sub == exp) {
      const fs::path dir = frames_dir.empty() ? ctx.workdir / "samples" / "latest" / "frames" : fs::path(frames_dir);
      const auto images = read_frames(dir);
      const int fps = export_fps > 0 ? export_fps : cfg.data.fps;
      pmtk::io::write_gif(gif_path, images, std::max(1, 100 / fps));
      result = {{"frames", images.size()}, {"gif", gif_path}};
      std::cout << "wrote " << gif_path << std::endl;
    }
    record["config_hash"] = cfg.hash();
    record["result"] = result;
  } catch (const pmtk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    code = kConfig;
  } catch (const pmtk::MissingCheckpoint& e) {
    std::cerr << "missing checkpoint: stage " << e.stage() << ": " << e.what() << std::endl;
    code = kMissing;
  } catch (const pmtk::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << std::endl;
    code = kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    code = kFailure;
  }
  record["exit_code"] = code;
  record["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (workdir) {
    try {
      record_run(*workdir, record);
    } catch (const std::exception& e) {
      std::cerr << "warning: could not write run.json: " << e.what() << std::endl;
    }
  }
  return code;
}
