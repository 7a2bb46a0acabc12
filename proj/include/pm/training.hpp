#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pm/checkpoint.hpp"
#include "pm/data.hpp"
#include "pm/losses.hpp"
#include "pm/networks.hpp"

namespace pm {

struct TrainConfig {
  long epochs = 20;
  long steps_per_epoch = 100;
  long batch_size = 6;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  long lr_drop_epoch = 15;
  LossWeights weights;
  bool use_sd_loss = true;
  double grad_clip = 10.0;     // global-norm ceiling, <= 0 disables
  long checkpoint_every = 5;   // epochs between snapshots
  uint64_t seed = 1;
};

// lr_initial before lr_drop_epoch, lr_final at and after
double lr_schedule(long epoch, const TrainConfig& cfg);

struct StepReport {
  std::vector<double> photometric, self_distill, smooth;  // per scale
  double total = 0;
  double grad_norm = 0;  // pre-clip global norm
  double lr = 0;
  double wall_ms = 0;
};

// Adaptive-moment optimizer over one or more parameter sets; moments are
// keyed by parameter name so checkpoints can carry them.
class Adam {
 public:
  explicit Adam(std::vector<ParamSet<float>*> sets, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One update from the accumulated gradients. Returns the global gradient
  // norm before clipping; clips to clip_norm when positive.
  double step(double lr, double clip_norm);
  void zero_grad();
  long steps() const { return t_; }

  void pack_state(Checkpoint& ck) const;  // opt.m.<name>, opt.v.<name>, meta opt_step
  void unpack_state(const Checkpoint& ck);

 private:
  std::vector<ParamSet<float>*> sets_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor<float>> m_, v_;
};

// One siamese update: hard branch forward with gradients, easy branch as a
// detached reference, pose from easy pairs, easy sources warped with
// hard-branch depth, per-scale losses on full-resolution upsampled
// predictions, one optimizer step. Throws on non-finite loss with the
// per-scale components in the message.
StepReport siamese_step(DepthNetwork<float>& depth_net, PoseNetwork<float>& pose_net,
                        const std::vector<SampleTriplet>& batch, Adam& opt, double lr,
                        const TrainConfig& cfg);

struct TrainResult {
  double final_total = 0;
  long steps_run = 0;
  std::string checkpoint_path;
  std::string log_path;
};

// Full loop: seeded batches, schedule, line-delimited JSON metric log,
// periodic checkpoints, optional resume (continues the step counter and
// schedule). extra_meta is copied into every checkpoint manifest.
TrainResult train(const TrainConfig& cfg, const NetworkConfig& netcfg, const TripletSource& data,
                  const std::string& out_dir, const CorruptionParams& corruption = {},
                  const std::string& resume_from = "",
                  const nlohmann::json& extra_meta = nlohmann::json::object());

// Single forward pass, full-resolution disparity converted to depth.
// (3,H,W) image in [0,1] -> (1,H,W) metric depth; identical path for all
// domains. Dimensions must match the network's construction size.
Tensor<float> infer(const DepthNetwork<float>& net, const Tensor<float>& image);

struct LoadedModel {
  std::unique_ptr<DepthNetwork<float>> net;
  std::unique_ptr<PoseNetwork<float>> pose;  // present when pose arrays exist
  long input_h = 0, input_w = 0;
  long step = 0;
};

LoadedModel depth_network_from_checkpoint(const Checkpoint& ck);

}  // namespace pm
