// Acceptance suite: one PASS/FAIL line per criterion.
//
//   pmtk_acceptance            run every criterion
//   pmtk_acceptance --only 7   run one

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pmtk/audio_encoder.hpp"
#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/mask_vae.hpp"
#include "pmtk/media.hpp"
#include "pmtk/metrics.hpp"
#include "pmtk/moe.hpp"
#include "pmtk/motion_codec.hpp"
#include "pmtk/motion_diffusion.hpp"
#include "pmtk/pipeline.hpp"
#include "pmtk/renderer.hpp"
#include "pmtk/run_config.hpp"
#include "pmtk/stages.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/train_util.hpp"

namespace fs = std::filesystem;
using namespace pmtk;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a named check; the criterion fails if any check fails.
  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (detail.tellp() > 0) detail << "; ";
    detail << what << (ok ? "" : " [FAILED]");
  }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig desk_config() {
  RunConfig c;
  c.sync_shapes();
  c.validate();
  return c;
}

// Train/validation split of the desk dataset, generated in memory.
struct DeskData {
  std::vector<data::Sample> train, val;
};

DeskData desk_data(const data::GeneratorConfig& g) {
  DeskData d;
  for (int i = 0; i < g.identities; ++i)
    for (int c = 0; c < g.clips_per_identity; ++c) {
      auto s = data::generate_sample(g, i, c);
      (s.properties.at("split") == "val" ? d.val : d.train).push_back(std::move(s));
    }
  return d;
}

// ---------------------------------------------------------------------------

void criterion_1(Outcome& out) {
  torch::manual_seed(1);
  const RunConfig cfg = desk_config();
  const auto dim = cfg.renderer.width_high;
  const auto hidden = cfg.renderer.ffn_mult * dim;
  moe::ViewMoE view(dim, cfg.renderer.heads, hidden, cfg.renderer.view_embed_dim, cfg.renderer.num_views,
                    cfg.renderer.tau);
  moe::MaskMoE mask(dim, hidden);
  moe::tie_experts(view);
  moe::tie_experts(mask);
  torch::NoGradGuard ng;
  auto gen = make_generator(11);
  double worst_view = 0.0, worst_mask = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto x = torch::randn({2, 16, dim}, gen);
    auto v = torch::randn({2, cfg.renderer.view_embed_dim}, gen);
    auto az = torch::rand({2}, gen) * 2 * kPi;
    const int phase = 1 + i % 2;
    auto dense_v = view->expert(0).forward(x, v);
    auto y = view->forward(x, az, v, phase);
    worst_view = std::max(worst_view, ((y - dense_v).abs().max() / dense_v.abs().max()).item<double>());

    auto masks = torch::softmax(torch::randn({2, 16, 3}, gen) * 3, 2);
    auto dense_m = mask->expert(0).forward(x);
    auto ym = mask->forward_tokens(x, masks);
    worst_mask = std::max(worst_mask, ((ym - dense_m).abs().max() / dense_m.abs().max()).item<double>());
  }
  out.check(worst_view <= 1e-5, "view-MoE max rel err " + fmt(worst_view));
  out.check(worst_mask <= 1e-5, "mask-MoE max rel err " + fmt(worst_mask));
}

void criterion_2(Outcome& out) {
  const RunConfig cfg = desk_config();
  auto gen = make_generator(2);
  auto az = torch::rand({10000}, gen, torch::kDouble) * 2 * kPi;
  auto tau = 0.01 + torch::rand({1}, gen).item<double>() * 2.0;
  double worst = 0.0;
  for (double t : {cfg.renderer.tau, tau}) {
    auto g = moe::view_gates(moe::view_distance(az, cfg.renderer.num_views), 2, t);
    worst = std::max(worst, (g.sum(1) - 1).abs().max().item<double>());
  }
  out.check(worst <= 1e-6, "gate sum max |err| " + fmt(worst) + " over 10^4 azimuths");

  double worst_partition = 0.0;
  std::size_t sets = 0;
  auto g = cfg.data;
  for (int i = 0; i < g.identities; ++i) {
    auto s = data::generate_sample(g, i, 0);
    worst_partition = std::max({worst_partition, s.masks.partition_error(), s.reference.masks.partition_error()});
    sets += 2;
  }
  out.check(worst_partition <= 1e-6,
            "partition error max " + fmt(worst_partition) + " over " + std::to_string(sets) + " mask sets");
}

void criterion_3(Outcome& out) {
  torch::manual_seed(3);
  RunConfig cfg = desk_config();
  auto g = cfg.data;
  g.identities = cfg.data.views;
  g.duration_s = 0.64;
  std::vector<render::RenderClip> clips;
  for (int i = 0; i < g.identities; ++i) clips.push_back(pipeline::render_clip(data::generate_sample(g, i, 0)));
  render::RenderModel model(cfg.renderer);
  auto opt = render::make_render_optimizer(model, cfg.renderer_train);
  const auto views = cfg.renderer.num_views;
  std::int64_t steps_checked = 0, violations = 0, selected_active = 0;
  auto verify = [&](std::int64_t step, double) {
    const auto selected = (step - 1) % views;
    bool selected_moved = false;
    for (auto& m : model->view_moes())
      for (std::int64_t k = 0; k < m->num_experts(); ++k)
        for (auto& p : m->expert(k).parameters()) {
          const auto& grad = p.grad();
          const bool nonzero = grad.defined() && grad.abs().max().item<double>() != 0.0;
          if (k == selected)
            selected_moved |= nonzero;
          else if (nonzero)
            ++violations;
        }
    ++steps_checked;
    // The denoiser output projection starts at zero, so step 1 reaches no expert.
    if (selected_moved || step == 1) ++selected_active;
  };
  auto r = render::train_render_phase(model, opt, clips, 1, 50, cfg.renderer_train, 7, 0, verify);
  out.check(steps_checked == 50 && violations == 0,
            std::to_string(steps_checked) + " steps, " + std::to_string(violations) + " non-selected expert gradients");
  out.check(r.isolation_checks == 50, "trainer isolation assertions " + std::to_string(r.isolation_checks));
  out.check(selected_active == 50, "selected expert received gradient in " + std::to_string(selected_active) + " steps");
}

void criterion_4(Outcome& out) {
  torch::manual_seed(4);
  RunConfig cfg = desk_config();
  auto mc = cfg.motion_model();
  mc.bridge.use_lora = true;
  diffusion::MotionModel model(mc);
  model->eval();
  torch::NoGradGuard ng;
  auto gen = make_generator(4);
  auto clip = data::generate_audio(5, 1.0, 3);
  auto audio = audio_to_tensor(clip).unsqueeze(0);
  auto p1 = motion_to_tensor(data::rest_pose(9));
  auto x = torch::randn({1, 25, mc.denoiser.input_dim}, gen);
  auto t = torch::tensor({37}, torch::kLong);

  model->set_lora_attached(true);
  auto cond_a = model->condition(audio, p1, 25);
  auto eps_a = model->predict_eps(x, t, cond_a);
  model->set_lora_attached(false);
  auto cond_d = model->condition(audio, p1, 25);
  auto eps_d = model->predict_eps(x, t, cond_d);
  const double dz = (cond_a.z - cond_d.z).abs().max().item<double>();
  const double de = (eps_a - eps_d).abs().max().item<double>();
  out.check(dz <= 1e-7, "bridge output max |diff| " + fmt(dz));
  out.check(de <= 1e-7, "denoiser output max |diff| " + fmt(de));
}

void criterion_5(Outcome& out) {
  const RunConfig cfg = desk_config();
  auto schedule = diffusion::NoiseSchedule::linear(cfg.motion_diffusion_steps);
  bool monotone = true;
  for (std::int64_t t = 1; t <= schedule.steps(); ++t) monotone &= schedule.alpha_bar(t) < schedule.alpha_bar(t - 1);
  out.check(monotone, "alpha_bar strictly decreasing over " + std::to_string(schedule.steps()) + " steps");

  // p0 with variance 4 so the closed form differs from 1.
  auto gen = make_generator(5);
  double worst = 0.0;
  for (std::int64_t t : {1L, 10L, 50L, schedule.steps()}) {
    auto p0 = torch::randn({10000}, gen, torch::kDouble) * 2.0;
    auto eps = torch::randn({10000}, gen, torch::kDouble);
    const double var = diffusion::q_sample(schedule, p0, t, eps).var().item<double>();
    const double ab = schedule.alpha_bar(t);
    const double closed = ab * 4.0 + (1.0 - ab);
    worst = std::max(worst, std::abs(var - closed) / closed);
  }
  out.check(worst <= 0.05, "q_sample variance max rel err " + fmt(worst));

  // Point mass: one fixed sequence, a small denoiser, then ancestral sampling.
  torch::manual_seed(5);
  MotionDenoiserConfig dc;
  dc.width = 64;
  dc.blocks = 2;
  dc.z_dim = 8;
  dc.audio_dim = 8;
  diffusion::MotionDenoiser net(dc);
  const std::int64_t len = 16;
  auto pose = motion_to_tensor(data::rest_pose(3));
  auto wave = torch::linspace(0, 1, len).unsqueeze(1) * 0.5;
  auto target = (pose + wave).unsqueeze(0);  // [1, L, 16]
  auto z = torch::zeros({1, len, 8});
  auto a = torch::zeros({1, len, 8});
  auto bind = [&](std::int64_t b) -> diffusion::EpsPredictor {
    auto p1 = pose.expand({b, 16});
    auto zb = z.expand({b, len, 8});
    auto ab = a.expand({b, len, 8});
    return [=, &net](const torch::Tensor& x, const torch::Tensor& t) { return net->forward(x, t, p1, zb, ab); };
  };
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
  const std::int64_t steps = 1500, batch = 32;
  auto train_model = bind(batch);
  for (std::int64_t step = 1; step <= steps; ++step) {
    auto g = make_generator(derive_seed(55, step));
    auto loss = diffusion::training_loss(train_model, schedule, target.expand({batch, len, 16}), g);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  net->eval();
  torch::NoGradGuard ng;
  auto g = make_generator(99);
  auto sample = diffusion::ancestral_sample(bind(4), schedule, {4, len, 16}, g);
  const double l1 = (sample - target).abs().mean().item<double>();
  out.check(l1 < 0.1, "point-mass sample L1 " + fmt(l1) + " after " + std::to_string(steps) + " steps");
}

void criterion_6(Outcome& out) {
  std::mt19937_64 rng(6);
  std::int64_t idem_fail = 0, tie_fail = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto k = std::uniform_int_distribution<std::int64_t>(1, 64)(rng);
    const auto c = std::uniform_int_distribution<std::int64_t>(1, 8)(rng);
    auto g = make_generator(rng());
    auto book = torch::randn({k, c}, g);
    auto x = torch::randn({7, c}, g) * 2;
    auto q1 = codec::quantize(x, book);
    auto q2 = codec::quantize(q1.vectors, book);
    auto q3 = codec::quantize(x, book);
    if (!torch::equal(q1.indices, q2.indices) || !torch::equal(q1.vectors, q2.vectors) ||
        !torch::equal(q1.indices, q3.indices))
      ++idem_fail;
  }
  for (int i = 0; i < 5000; ++i) {
    // Integer entries a and b, the latent at their midpoint, every other
    // entry far away: the lower of the two indices must win.
    const auto k = std::uniform_int_distribution<std::int64_t>(2, 32)(rng);
    const auto c = std::uniform_int_distribution<std::int64_t>(1, 8)(rng);
    auto g = make_generator(rng());
    auto book = torch::randint(-4, 5, {k, c}, g).to(torch::kFloat) + 100.0;
    const auto ia = std::uniform_int_distribution<std::int64_t>(0, k - 1)(rng);
    auto ib = std::uniform_int_distribution<std::int64_t>(0, k - 2)(rng);
    if (ib >= ia) ++ib;
    book[ia] = torch::randint(-4, 5, {c}, g).to(torch::kFloat);
    book[ib] = book[ia] + 2 * torch::randint(-2, 3, {c}, g).to(torch::kFloat);
    auto mid = ((book[ia] + book[ib]) / 2).unsqueeze(0);
    auto q = codec::quantize(mid, book);
    if (q.indices[0].item<std::int64_t>() != std::min(ia, ib)) ++tie_fail;
  }
  out.check(idem_fail == 0, "idempotence/determinism failures " + std::to_string(idem_fail) + "/5000");
  out.check(tie_fail == 0, "tie-break failures " + std::to_string(tie_fail) + "/5000");

  const RunConfig cfg = desk_config();
  const auto t0 = std::chrono::steady_clock::now();
  auto d = desk_data(cfg.data);
  std::vector<torch::Tensor> motions;
  for (const auto& s : d.train) motions.push_back(motion_to_tensor(s.motion));
  torch::manual_seed(cfg.stage_seed(stage::kVq));
  codec::MotionCodec codec(cfg.vq);
  auto opt = codec::make_vq_optimizer(codec, cfg.vq_train);
  codec::train_vq(codec, opt, motions, cfg.vq_train, cfg.stage_seed(stage::kVq));
  codec->eval();
  double l1 = 0.0;
  for (const auto& s : d.val) l1 += metrics::l1_pose(codec->reconstruct(s.motion), s.motion);
  l1 /= static_cast<double>(d.val.size());
  const double secs = seconds_since(t0);
  out.check(l1 <= 0.1, "held-out reconstruction L1 " + fmt(l1) + " on " + std::to_string(d.val.size()) + " clips");
  out.check(secs <= 600, "desk training " + fmt(secs, 3) + " s for " + std::to_string(cfg.vq_train.steps) + " steps");
}

// Per-frame detector stand-in: every frame of the ground truth is shifted by
// up to one pixel and perturbed with pixel noise, independently per frame.
data::RegionMaskSet noisy_detection(const data::RegionMaskSet& gt, std::uint64_t seed) {
  auto t = masks_to_tensor(gt);
  auto g = make_generator(seed);
  auto shifts = torch::randint(-1, 2, {t.size(0), 2}, g, torch::kLong);
  std::vector<torch::Tensor> frames;
  for (std::int64_t n = 0; n < t.size(0); ++n)
    frames.push_back(torch::roll(t[n], {shifts[n][0].item<std::int64_t>(), shifts[n][1].item<std::int64_t>()}, {1, 2}));
  auto noisy = (torch::stack(frames) + torch::randn(t.sizes(), g) * 0.1).clamp_min(1e-4);
  return tensor_to_masks(noisy / noisy.sum(1, true));
}

void criterion_7(Outcome& out) {
  const RunConfig cfg = desk_config();
  const auto t0 = std::chrono::steady_clock::now();
  auto d = desk_data(cfg.data);
  std::vector<maskvae::MaskClip> clips;
  for (const auto& s : d.train) clips.push_back(pipeline::mask_clip(s));
  torch::manual_seed(cfg.stage_seed(stage::kMaskVae));
  maskvae::MaskVae vae(cfg.mask_vae);
  auto opt = maskvae::make_mask_vae_optimizer(vae, cfg.mask_vae_train);
  maskvae::train_mask_vae(vae, opt, clips, cfg.mask_vae_train, cfg.stage_seed(stage::kMaskVae));
  vae->eval();
  const double train_secs = seconds_since(t0);

  // 16 held-out clips: two clips of each validation identity.
  auto g = cfg.data;
  g.clips_per_identity = 2;
  std::vector<data::Sample> held;
  for (int i = g.holdout_every - 1; i < g.identities; i += g.holdout_every)
    for (int c = 0; c < 2; ++c) held.push_back(data::generate_sample(g, i, c));

  torch::NoGradGuard ng;
  const auto fg = metrics::MaskChannel::Foreground;
  double iou = 0.0, iou_id = 0.0, iou_ref = 0.0, flicker_vae = 0.0, flicker_noisy = 0.0, min_kl = 1e300;
  for (std::size_t k = 0; k < held.size(); ++k) {
    const auto& s = held[k];
    auto c = pipeline::mask_clip(s);
    // Transfer pairs: every frame is predicted from the mask of a frame 7 steps away.
    auto perm = torch::roll(torch::arange(c.masks.size(0)), 7);
    auto transfer = vae->predict_mask(c.masks.index_select(0, perm), c.skeleton.index_select(0, perm), c.skeleton);
    iou += metrics::mask_iou(tensor_to_masks(transfer), s.masks, fg);
    iou_id += metrics::mask_iou(tensor_to_masks(vae->predict_mask(c.masks, c.skeleton, c.skeleton)), s.masks, fg);
    auto pm = tensor_to_masks(pipeline::predict_masks(vae, s.reference, c.skeleton, s.height, s.width));
    iou_ref += metrics::mask_iou(pm, s.masks, fg);
    flicker_vae += metrics::flicker(pm);
    flicker_noisy += metrics::flicker(noisy_detection(s.masks, 700 + k));
    auto z = vae->encode_mask(masks_to_tensor(s.masks));
    min_kl = std::min(min_kl, maskvae::gaussian_kl(z.mu, z.logvar).item<double>());
  }
  const double n = static_cast<double>(held.size());
  iou /= n;
  iou_id /= n;
  iou_ref /= n;
  flicker_vae /= n;
  flicker_noisy /= n;
  auto rg = make_generator(77);
  for (int i = 0; i < 1000; ++i) {
    auto mu = torch::randn({1, cfg.mask_vae.latent_dim}, rg) * 3;
    auto lv = torch::randn({1, cfg.mask_vae.latent_dim}, rg) * 3;
    min_kl = std::min(min_kl, maskvae::gaussian_kl(mu, lv).item<double>());
  }
  out.check(iou >= 0.7, "held-out transfer IoU " + fmt(iou) + " on " + std::to_string(held.size()) + " clips");
  out.check(iou_id >= 0.8, "identity-pair IoU " + fmt(iou_id));
  out.check(iou_ref >= 0.7, "reference-frame transfer IoU " + fmt(iou_ref));
  out.check(cfg.mask_vae_train.steps <= 2000 && train_secs <= 900,
            std::to_string(cfg.mask_vae_train.steps) + " steps in " + fmt(train_secs, 3) + " s");
  out.check(min_kl >= 0.0, "min KL " + fmt(min_kl));
  out.check(flicker_vae < flicker_noisy, "flicker VAE " + fmt(flicker_vae) + " vs noisy detection " + fmt(flicker_noisy));
}

struct MotionEval {
  double lvd_true = 0, lvd_shuffled = 0, diversity = 0;
};

MotionEval train_and_eval_motion(const RunConfig& cfg, const std::vector<data::Sample>& train,
                                 const std::vector<data::Sample>& eval, bool use_bridge) {
  std::vector<diffusion::MotionClip> clips;
  std::vector<torch::Tensor> motions;
  for (const auto& s : train) {
    clips.push_back(pipeline::motion_clip(s));
    motions.push_back(clips.back().motion);
  }
  auto mc = cfg.motion_model();
  mc.denoiser.use_bridge = use_bridge;
  mc.finalize();
  torch::manual_seed(cfg.stage_seed(stage::kMotion));
  diffusion::MotionModel model(mc);
  model->fit_normalization(motions);
  auto opt = diffusion::make_motion_optimizer(model, cfg.motion_train);
  diffusion::train_motion(model, opt, clips, cfg.motion_train, cfg.stage_seed(stage::kMotion));
  model->eval();

  MotionEval r;
  std::vector<data::MotionSequence> generated;
  const auto n = eval.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = eval[i];
    const auto& other = eval[(i + 1) % n];
    data::MotionSequence first(1, s.motion.fps);
    std::copy_n(s.motion.values.begin(), first.values.size(), first.values.begin());
    const auto seed = derive_seed(cfg.stage_seed("eval"), i);
    auto own = model->sample(s.audio, first, s.motion.n_frames, seed);
    auto shuffled = model->sample(other.audio, first, s.motion.n_frames, seed);
    r.lvd_true += metrics::lvd(own, s.motion);
    r.lvd_shuffled += metrics::lvd(shuffled, s.motion);
    generated.push_back(std::move(own));
  }
  r.lvd_true /= static_cast<double>(n);
  r.lvd_shuffled /= static_cast<double>(n);
  std::mt19937_64 rng(8);
  r.diversity = metrics::diversity(generated, 256, rng);
  return r;
}

void criterion_8(Outcome& out) {
  const RunConfig cfg = desk_config();
  auto d = desk_data(cfg.data);
  // 32 evaluation clips of unseen identities and audio.
  auto g = cfg.data;
  g.seed = cfg.data.seed + 1000;
  g.identities = 32;
  std::vector<data::Sample> eval;
  for (int i = 0; i < 32; ++i) eval.push_back(data::generate_sample(g, i, 0));

  auto with = train_and_eval_motion(cfg, d.train, eval, true);
  auto without = train_and_eval_motion(cfg, d.train, eval, false);
  const double margin = (with.lvd_shuffled - with.lvd_true) / with.lvd_shuffled;
  out.check(margin >= 0.2, "LVD true " + fmt(with.lvd_true) + " vs shuffled " + fmt(with.lvd_shuffled) + " (margin " +
                               fmt(100 * margin, 3) + "%)");
  out.check(with.diversity >= without.diversity,
            "diversity with bridge " + fmt(with.diversity) + " vs ablated " + fmt(without.diversity));
}

void criterion_9(Outcome& out) {
  auto g = make_generator(9);
  auto to_eigen = [](const torch::Tensor& t) {
    auto c = t.to(torch::kDouble).contiguous();
    return Eigen::MatrixXd(Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        c.data_ptr<double>(), c.size(0), c.size(1)));
  };
  auto x = to_eigen(torch::randn({2000, 8}, g) * torch::rand({8}, g) * 2);
  auto sx = metrics::fit_gaussian(x);
  const double self = metrics::frechet_distance(sx, sx);
  out.check(std::abs(self) <= 1e-6, "FD(X,X) " + fmt(self));

  const int dim = 4, n = 20000;
  auto a = to_eigen(torch::randn({n, dim}, g, torch::kDouble));
  auto shift = torch::tensor({3.0, -1.0, 0.5, 2.0}, torch::kDouble);
  auto b = to_eigen(torch::randn({n, dim}, g, torch::kDouble) + shift);
  const double mu2 = shift.pow(2).sum().item<double>();
  const double fd = metrics::frechet_distance(metrics::fit_gaussian(a), metrics::fit_gaussian(b));
  out.check(std::abs(fd - mu2) / mu2 <= 0.05, "sampled FD " + fmt(fd) + " vs |mu|^2 " + fmt(mu2));

  double worst = 0.0;
  for (auto [s1, s2] : {std::pair{2.0, 1.0}, {0.5, 3.0}, {1.7, 1.7}}) {
    metrics::GaussianStats p{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, s1 * s1)};
    metrics::GaussianStats q{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, s2 * s2)};
    worst = std::max(worst, std::abs(metrics::frechet_distance(p, q) - (s1 - s2) * (s1 - s2)));
  }
  out.check(worst <= 1e-6, "1-D closed form max |err| " + fmt(worst));
}

// Central differences in double precision against autograd for `count`
// randomly chosen parameter entries. Entries where both gradients vanish are
// redrawn.
double gradient_check(torch::nn::Module& module, const std::function<torch::Tensor()>& loss_fn, int count,
                      std::uint64_t seed) {
  auto params = module.parameters();
  std::int64_t total = 0;
  for (auto& p : params) total += p.numel();
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  loss_fn().backward();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
  double worst = 0.0;
  int done = 0;
  for (int attempts = 0; done < count && attempts < 100 * count; ++attempts) {
    auto flat = pick(rng);
    std::size_t pi = 0;
    while (flat >= params[pi].numel()) flat -= params[pi++].numel();
    auto& p = params[pi];
    const double analytic = p.grad().defined() ? p.grad().view(-1)[flat].item<double>() : 0.0;
    const double h = 1e-6;
    double numeric;
    {
      torch::NoGradGuard ng;
      auto view = p.view(-1);
      const double orig = view[flat].item<double>();
      view[flat] = orig + h;
      const double up = loss_fn().item<double>();
      view[flat] = orig - h;
      const double down = loss_fn().item<double>();
      view[flat] = orig;
      numeric = (up - down) / (2 * h);
    }
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-7) continue;
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
    ++done;
  }
  return done == count ? worst : 1.0;
}

void perturb(torch::nn::Module& m, std::uint64_t seed) {
  torch::NoGradGuard ng;
  auto g = make_generator(seed);
  for (auto& p : m.parameters()) p.add_(torch::randn(p.sizes(), g, p.options()) * 0.05);
}

void criterion_10(Outcome& out) {
  const RunConfig cfg = desk_config();
  auto g = make_generator(10);
  const auto dbl = torch::kDouble;

  {
    torch::manual_seed(10);
    audio::AudioEncoder enc(cfg.audio);
    enc->to(dbl);
    perturb(*enc, 1);
    auto wave = torch::randn({1, 4000}, g, dbl) * 0.3;
    auto w = torch::randn({1, 10, cfg.audio.channels}, g, dbl);
    double err = gradient_check(*enc, [&] { return (enc->forward(wave, 10) * w).sum(); }, 10, 1);
    out.check(err <= 1e-3, "audio encoder rel err " + fmt(err));
  }

  RendererConfig rc = cfg.renderer;
  rc.width_high = 16;
  rc.heads = 4;
  rc.view_embed_dim = 8;
  {
    torch::manual_seed(11);
    render::RenderBlock block(render::BlockKind::Denoiser, 16, rc, true);
    block->to(dbl);
    perturb(*block, 2);
    const std::int64_t frames = 3;
    auto x = torch::randn({frames, 6, 16}, g, dbl);
    auto temb = torch::randn({frames, 16}, g, dbl);
    auto ref = torch::randn({frames, 6, 16}, g, dbl);
    auto masks = torch::softmax(torch::randn({frames, 6, 3}, g, dbl), 2);
    auto w = torch::randn({frames, 6, 16}, g, dbl);
    render::ViewContext view;
    double err = gradient_check(
        *block, [&] { return (block->forward_denoiser(x, temb, ref, masks, frames, view) * w).sum(); }, 10, 2);
    out.check(err <= 1e-3, "mask-MoE block rel err " + fmt(err));
  }
  {
    torch::manual_seed(12);
    render::RenderBlock block(render::BlockKind::Reference, 16, rc, false);
    block->to(dbl);
    perturb(*block, 3);
    auto x = torch::randn({2, 6, 16}, g, dbl);
    auto az = torch::tensor({0.4, 3.0}, dbl);
    render::ViewContext view{moe::view_gates(moe::view_distance(az, rc.num_views), 2, rc.tau).to(dbl),
                             torch::randn({2, 8}, g, dbl)};
    auto w = torch::randn({2, 6, 16}, g, dbl);
    double err = gradient_check(*block, [&] { return (block->forward_reference(x, view, nullptr) * w).sum(); }, 10, 3);
    out.check(err <= 1e-3, "view-MoE block rel err " + fmt(err));
  }
  {
    torch::manual_seed(13);
    auto dc = cfg.motion_model().denoiser;
    dc.blocks = 1;
    diffusion::MotionDenoiser den(dc);
    den->to(dbl);
    perturb(*den, 4);
    const std::int64_t len = 12;
    auto x = torch::randn({2, len, dc.input_dim}, g, dbl);
    auto t = torch::tensor({3, 80}, torch::kLong);
    auto p1 = torch::randn({2, dc.pose_dim}, g, dbl);
    auto z = torch::randn({2, len, dc.z_dim}, g, dbl);
    auto a = torch::randn({2, len, dc.audio_dim}, g, dbl);
    auto w = torch::randn({2, len, dc.input_dim}, g, dbl);
    double err = gradient_check(*den, [&] { return (den->forward(x, t, p1, z, a) * w).sum(); }, 10, 4);
    out.check(err <= 1e-3, "1-block denoiser rel err " + fmt(err));
  }
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PMTK_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_11(Outcome& out) {
  const fs::path work = fs::temp_directory_path() / ("pmtk-acceptance-e2e-" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const auto log = work / "pipeline.log";
  const auto t0 = std::chrono::steady_clock::now();
  const std::string wd = "--workdir " + (work / "run").string();
  const std::string val_id = "id0007_c00";
  const auto data = work / "run" / "data" / val_id;
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"gen-data", wd + " gen-data"},
      {"train-vq", wd + " train-vq"},
      {"train-motion", wd + " train-motion"},
      {"train-mask-vae", wd + " train-mask-vae"},
      {"train-renderer", wd + " train-renderer --phase both"},
      {"sample", wd + " sample --audio " + (data / "audio.wav").string() + " --ref " + (data / "reference.png").string() +
                     " --azimuth 30 --frames 16 --gif " + (work / "sample.gif").string()},
      {"eval", wd + " eval"},
  };
  bool all_ok = true;
  std::ostringstream timings;
  for (const auto& [name, args] : steps) {
    const auto ts = std::chrono::steady_clock::now();
    const int code = run_cli(args, log);
    timings << name << " " << fmt(seconds_since(ts), 3) << "s ";
    if (code != 0) {
      out.check(false, name + " exit " + std::to_string(code) + " (log " + log.string() + ")");
      all_ok = false;
      break;
    }
  }
  const double secs = seconds_since(t0);
  if (all_ok) {
    const auto frames = work / "run" / "samples" / "latest" / "frames";
    int n = 0;
    bool sized = true;
    for (const auto& e : fs::directory_iterator(frames)) {
      if (e.path().extension() != ".png") continue;
      auto img = io::read_png(e.path());
      sized &= img.height == 64 && img.width == 64;
      ++n;
    }
    out.check(n == 16 && sized, std::to_string(n) + " sampled frames at 64x64");
    out.check(fs::exists(work / "run" / "eval.json"), "eval.json written");
    out.check(fs::exists(work / "sample.gif"), "GIF written");

    // View consistency: the same held-out motion at two adjacent anchors.
    torch::NoGradGuard ng;
    const auto cfg = RunConfig::load(work / "run" / "config.json");
    auto model = stages::load_renderer(cfg, work / "run");
    const auto s = data::generate_sample(cfg.data, 7, 0);
    const auto bg = data::Identity::from_seed(s.identity_seed).background;
    const std::int64_t nf = 16, h = cfg.data.height, w = cfg.data.width;
    for (int k : {0, 1}) {
      pipeline::RenderRequest rq;
      rq.motion = s.motion;
      rq.motion.n_frames = nf;
      rq.motion.values.resize(static_cast<std::size_t>(nf) * rq.motion.frame_size());
      rq.reference = s.reference;
      rq.azimuth = data::anchor_azimuth(k, cfg.renderer.num_views);
      rq.mask_source = pipeline::MaskSource::GroundTruth;
      rq.identity_seed = s.identity_seed;
      rq.seed = 11;
      const auto res = pipeline::render_motion(model, nullptr, rq);
      const auto gt =
          data::render_sample(rq.motion, data::ViewLabel::from_azimuth(rq.azimuth), s.identity_seed, h, w);
      const double iou = pipeline::binary_iou(pipeline::estimate_foreground(res.frames, nf, h, w, bg),
                                              pipeline::estimate_foreground(gt.frames, nf, h, w, bg));
      out.check(iou >= 0.5, "anchor " + std::to_string(k) + " foreground IoU " + fmt(iou));
    }
    fs::remove_all(work);
  }
  out.check(secs < 3600, "pipeline " + fmt(secs, 4) + " s (" + timings.str() + ")");
}

struct Criterion {
  int id;
  const char* name;
  void (*run)(Outcome&);
};

const Criterion kCriteria[] = {
    {1, "MoE dense equivalence", criterion_1},
    {2, "gate and partition invariants", criterion_2},
    {3, "phase-1 isolation", criterion_3},
    {4, "LoRA zero-init identity", criterion_4},
    {5, "DDPM schedule and Monte-Carlo checks", criterion_5},
    {6, "VQ-VAE quantizer and desk reconstruction", criterion_6},
    {7, "mask VAE transfer, KL and flicker", criterion_7},
    {8, "conditioning efficacy", criterion_8},
    {9, "Frechet oracle", criterion_9},
    {10, "gradient checks", criterion_10},
    {11, "end-to-end smoke", criterion_11},
};

// Stated runtime budgets in seconds.
double budget(int id) {
  static const double kBudget[] = {10, 30, 120, 10, 600, 600, 900, 1800, 60, 300, 3600};
  return kBudget[id - 1];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pmtk acceptance suite"};
  int only = 0;
  app.add_option("--only", only, "Run a single criterion")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  torch::set_num_threads(1);

  int failed = 0;
  for (const auto& c : kCriteria) {
    if (only && c.id != only) continue;
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.check(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    out.check(secs <= budget(c.id), "runtime " + fmt(secs, 4) + " s (budget " + fmt(budget(c.id), 4) + " s)");
    std::cout << "criterion " << c.id << " " << (out.pass ? "PASS" : "FAIL") << " " << c.name << ": "
              << out.detail.str() << std::endl;
    if (!out.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
