#include "pm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pm/config.hpp"
#include "pm/core/rng.hpp"
#include "pm/geometry.hpp"

namespace pm {

using ad::Var;

double lr_schedule(long epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_final;
}

Adam::Adam(std::vector<ParamSet<float>*> sets, double beta1, double beta2, double eps)
    : sets_(std::move(sets)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* set : sets_)
    for (auto& [name, p] : set->items()) {
      if (m_.count(name)) throw std::invalid_argument("optimizer: duplicate parameter " + name);
      m_.emplace(name, Tensor<float>::zeros(p.shape()));
      v_.emplace(name, Tensor<float>::zeros(p.shape()));
    }
}

double Adam::step(double lr, double clip_norm) {
  double sq = 0;
  for (auto* set : sets_)
    for (auto& [name, p] : set->items()) {
      if (!p.has_grad()) continue;
      const float* g = p.grad().data();
      for (long i = 0; i < p.size(); ++i) sq += double(g[i]) * double(g[i]);
    }
  const double norm = std::sqrt(sq);
  const double scale = clip_norm > 0 && norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (auto* set : sets_)
    for (auto& [name, p] : set->items()) {
      if (!p.has_grad()) continue;
      const float* g = p.grad().data();
      float* m = m_.at(name).data();
      float* v = v_.at(name).data();
      float* w = p.value().data();
      for (long i = 0; i < p.size(); ++i) {
        const double gi = double(g[i]) * scale;
        m[i] = float(beta1_ * m[i] + (1.0 - beta1_) * gi);
        v[i] = float(beta2_ * v[i] + (1.0 - beta2_) * gi * gi);
        w[i] -= float(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_));
      }
    }
  return norm;
}

void Adam::zero_grad() {
  for (auto* set : sets_) set->zero_grad();
}

void Adam::pack_state(Checkpoint& ck) const {
  for (const auto& [name, t] : m_) ck.put("opt.m." + name, t);
  for (const auto& [name, t] : v_) ck.put("opt.v." + name, t);
  ck.meta["opt_step"] = t_;
}

void Adam::unpack_state(const Checkpoint& ck) {
  auto restore = [&](const char* prefix, std::map<std::string, Tensor<float>>& into) {
    for (auto& [name, t] : into) {
      const Tensor<float>* found = ck.find(prefix + name);
      if (!found) throw std::runtime_error("checkpoint missing optimizer state for " + name);
      if (found->shape() != t.shape())
        throw std::runtime_error("optimizer state shape mismatch for " + name);
      t = *found;
    }
  };
  restore("opt.m.", m_);
  restore("opt.v.", v_);
  t_ = ck.meta.value("opt_step", 0L);
}

namespace {

bool same_intrinsics(const CameraIntrinsics& a, const CameraIntrinsics& b) {
  return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.width == b.width &&
         a.height == b.height;
}

}  // namespace

StepReport siamese_step(DepthNetwork<float>& depth_net, PoseNetwork<float>& pose_net,
                        const std::vector<SampleTriplet>& batch, Adam& opt, double lr,
                        const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (batch.empty()) throw std::invalid_argument("siamese_step: empty batch");
  const long B = static_cast<long>(batch.size());
  const Shape& is = batch[0].easy_target.shape();
  if (is.size() != 3 || is[0] != 3)
    throw std::invalid_argument("siamese_step: images must be (3,H,W)");
  const long H = is[1], W = is[2];
  const CameraIntrinsics K = batch[0].intrinsics;
  for (const auto& s : batch) {
    if (s.easy_target.shape() != is || s.easy_prev.shape() != is || s.easy_next.shape() != is ||
        s.hard_target.shape() != is)
      throw std::invalid_argument("siamese_step: mixed image shapes in batch");
    if (!same_intrinsics(s.intrinsics, K))
      throw std::invalid_argument("siamese_step: mixed intrinsics in batch");
  }

  auto stack = [&](auto pick) {
    Tensor<float> out({B, 3, H, W});
    for (long b = 0; b < B; ++b) {
      const Tensor<float>& src = pick(batch[static_cast<size_t>(b)]);
      std::copy(src.data(), src.data() + src.size(), out.data() + b * src.size());
    }
    return Var<float>::leaf(std::move(out));
  };
  auto easy_prev = stack([](const SampleTriplet& s) -> const Tensor<float>& { return s.easy_prev; });
  auto easy_tgt = stack([](const SampleTriplet& s) -> const Tensor<float>& { return s.easy_target; });
  auto easy_next = stack([](const SampleTriplet& s) -> const Tensor<float>& { return s.easy_next; });
  auto hard_tgt = stack([](const SampleTriplet& s) -> const Tensor<float>& { return s.hard_target; });

  const NetworkConfig& nc = depth_net.config();
  const long S = nc.scales;

  // hard branch carries the gradients; every scale is upsampled to full
  // resolution before any loss sees it
  auto sigs_h = depth_net.forward(hard_tgt);
  std::vector<Var<float>> disp_h(static_cast<size_t>(S)), depth_h(static_cast<size_t>(S));
  for (long s = 0; s < S; ++s) {
    disp_h[s] = s == 0 ? sigs_h[0] : ad::upsample(sigs_h[s], 1L << s);
    depth_h[s] = disparity_to_depth(disp_h[s], nc.range);
  }

  std::vector<long> transformed;
  for (long b = 0; b < B; ++b)
    if (batch[static_cast<size_t>(b)].transformed) transformed.push_back(b);
  const bool sd_active = cfg.use_sd_loss && !transformed.empty();

  // easy branch is a frozen reference: no tape
  std::vector<Var<float>> depth_e(static_cast<size_t>(S));
  if (sd_active) {
    ad::NoGradGuard guard;
    auto sigs_e = depth_net.forward(easy_tgt);
    for (long s = 0; s < S; ++s)
      depth_e[s] =
          disparity_to_depth(s == 0 ? sigs_e[0] : ad::upsample(sigs_e[s], 1L << s), nc.range);
  }

  // pose only ever sees easy frames
  auto vec_prev = pose_net.forward(easy_tgt, easy_prev);
  auto vec_next = pose_net.forward(easy_tgt, easy_next);

  auto transformed_rows = [&](const Var<float>& x) {
    if (static_cast<long>(transformed.size()) == B) return x;
    std::vector<Var<float>> parts;
    for (long b : transformed) parts.push_back(ad::slice(x, 0, b, 1));
    return parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
  };

  StepReport rep;
  rep.lr = lr;
  std::vector<loss::ScaleLosses<float>> per_scale(static_cast<size_t>(S));
  for (long s = 0; s < S; ++s) {
    auto wp = geo::synthesize_view(easy_prev, depth_h[s], ad::slice(vec_prev, 1, 0, 3),
                                   ad::slice(vec_prev, 1, 3, 3), K);
    auto wn = geo::synthesize_view(easy_next, depth_h[s], ad::slice(vec_next, 1, 0, 3),
                                   ad::slice(vec_next, 1, 3, 3), K);
    std::vector<loss::Reconstruction<float>> recons{{wp.image, wp.valid}, {wn.image, wn.valid}};
    per_scale[s].photometric = loss::min_reprojection_loss(easy_tgt, recons);
    per_scale[s].self_distillation =
        sd_active ? loss::self_distillation_loss(transformed_rows(depth_h[s]),
                                                 transformed_rows(depth_e[s]))
                  : ad::constant(Tensor<float>({1}, 0.0f));
    per_scale[s].smoothness = loss::smoothness_loss(disp_h[s], hard_tgt);
    rep.photometric.push_back(per_scale[s].photometric.item());
    rep.self_distill.push_back(per_scale[s].self_distillation.item());
    rep.smooth.push_back(per_scale[s].smoothness.item());
  }
  auto total = loss::total_loss(per_scale, cfg.weights);
  rep.total = total.item();

  bool finite = std::isfinite(rep.total);
  for (long s = 0; s < S; ++s)
    finite = finite && std::isfinite(rep.photometric[s]) && std::isfinite(rep.self_distill[s]) &&
             std::isfinite(rep.smooth[s]);
  if (!finite) {
    std::ostringstream os;
    os << "siamese_step: non-finite loss, total=" << rep.total << " lr=" << lr;
    for (long s = 0; s < S; ++s)
      os << " s" << s << "(lp=" << rep.photometric[s] << " lsd=" << rep.self_distill[s]
         << " lsm=" << rep.smooth[s] << ")";
    throw std::runtime_error(os.str());
  }

  opt.zero_grad();
  total.backward();
  rep.grad_norm = opt.step(lr, cfg.grad_clip);
  rep.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

TrainResult train(const TrainConfig& cfg, const NetworkConfig& netcfg, const TripletSource& data,
                  const std::string& out_dir, const CorruptionParams& corruption,
                  const std::string& resume_from, const nlohmann::json& extra_meta) {
  if (cfg.epochs <= 0 || cfg.steps_per_epoch <= 0)
    throw std::invalid_argument("train: epochs and steps_per_epoch must be positive");
  if (data.size() <= 0) throw std::invalid_argument("train: empty dataset");
  std::filesystem::create_directories(out_dir);

  SampleTriplet probe = data.triplet(0);
  const long H = probe.easy_target.shape()[1], W = probe.easy_target.shape()[2];

  DepthNetwork<float> depth(netcfg, H, W, cfg.seed);
  PoseNetwork<float> pose(netcfg.encoder, cfg.seed);
  Adam opt({&depth.params(), &pose.params()});

  long start_step = 0;
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (!ck.meta.contains("network") || network_to_json(netcfg) != ck.meta.at("network"))
      throw std::runtime_error("train: checkpoint network config does not match");
    unpack_params(ck, depth.params());
    unpack_params(ck, pose.params());
    opt.unpack_state(ck);
    start_step = ck.meta.value("step", 0L);
  }

  const long total_steps = cfg.epochs * cfg.steps_per_epoch;
  if (start_step >= total_steps)
    throw std::invalid_argument("train: checkpoint already at or past the final step");

  TrainResult res;
  res.log_path = out_dir + "/metrics.jsonl";
  std::ofstream log(res.log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot write " + res.log_path);

  auto save = [&](const std::string& path, long next_step) {
    Checkpoint ck;
    ck.meta = extra_meta;
    ck.meta["network"] = network_to_json(netcfg);
    ck.meta["step"] = next_step;
    ck.meta["input_h"] = H;
    ck.meta["input_w"] = W;
    pack_params(ck, depth.params());
    pack_params(ck, pose.params());
    opt.pack_state(ck);
    save_checkpoint(path, ck);
  };

  for (long step = start_step; step < total_steps; ++step) {
    const long epoch = step / cfg.steps_per_epoch;
    const double lr = lr_schedule(epoch, cfg);
    auto batch = make_batch(data, cfg.batch_size,
                            derive_seed(cfg.seed, "step." + std::to_string(step)), corruption);
    StepReport rep = siamese_step(depth, pose, batch, opt, lr, cfg);

    log << nlohmann::json{{"step", step},
                          {"epoch", epoch},
                          {"lr", lr},
                          {"total", rep.total},
                          {"grad_norm", rep.grad_norm},
                          {"wall_ms", rep.wall_ms},
                          {"photometric", rep.photometric},
                          {"self_distill", rep.self_distill},
                          {"smooth", rep.smooth}}
               .dump()
        << "\n";
    log.flush();
    res.final_total = rep.total;
    res.steps_run += 1;

    const bool epoch_done = (step + 1) % cfg.steps_per_epoch == 0;
    if (epoch_done && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < total_steps)
      save(out_dir + "/checkpoint_latest.pmck", step + 1);
  }

  res.checkpoint_path = out_dir + "/checkpoint_final.pmck";
  save(res.checkpoint_path, total_steps);
  return res;
}

Tensor<float> infer(const DepthNetwork<float>& net, const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw std::invalid_argument("infer: image must be (3,H,W)");
  const NetworkConfig& nc = net.config();
  const long stages = static_cast<long>(nc.encoder.stage_widths.size());
  const long div = 1L << stages;
  if (s[1] % div != 0 || s[2] % div != 0)
    throw std::invalid_argument("infer: image dims must be divisible by " + std::to_string(div));
  if (nc.use_gcpa) {
    const Shape& ps = net.params().at("depth.prompts").shape();
    if (ps[2] != s[1] / div || ps[3] != s[2] / div)
      throw std::invalid_argument("infer: image size does not match the trained resolution");
  }
  ad::NoGradGuard guard;
  auto sig = net.forward(Var<float>::leaf(image.reshaped({1, 3, s[1], s[2]})))[0];
  return disparity_to_depth(sig, nc.range).value().reshaped({1, s[1], s[2]});
}

LoadedModel depth_network_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("network") || !ck.meta.contains("input_h") ||
      !ck.meta.contains("input_w"))
    throw std::runtime_error("checkpoint missing network metadata");
  LoadedModel out;
  NetworkConfig nc = network_from_json(ck.meta.at("network"));
  out.input_h = ck.meta.at("input_h").get<long>();
  out.input_w = ck.meta.at("input_w").get<long>();
  out.step = ck.meta.value("step", 0L);
  out.net = std::make_unique<DepthNetwork<float>>(nc, out.input_h, out.input_w, 0);
  unpack_params(ck, out.net->params());

  bool has_pose = false;
  for (const auto& [name, t] : ck.arrays)
    if (name.rfind("pose.", 0) == 0) {
      has_pose = true;
      break;
    }
  if (has_pose) {
    out.pose = std::make_unique<PoseNetwork<float>>(nc.encoder, 0);
    unpack_params(ck, out.pose->params());
  }
  return out;
}

}  // namespace pm
