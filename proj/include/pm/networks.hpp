#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pm/gcpa.hpp"
#include "pm/geometry.hpp"
#include "pm/module.hpp"

namespace pm {

struct EncoderSpec {
  std::vector<long> stage_widths = {16, 32, 64, 128, 256};
};

struct DisparityRange {
  double min_depth = 0.1;
  double max_depth = 100.0;
};

struct NetworkConfig {
  EncoderSpec encoder;
  long scales = 4;  // multi-scale prediction count S
  long num_prompts = 5;
  AttentionConfig attention;
  DisparityRange range;
  bool use_gcpa = true;  // ablation: plain skip at the deepest level instead
  bool use_cgpb = true;  // ablation: attend over raw, unconditioned prompts
};

// what the decoder actually did on the last forward, for structural audits
struct DecodeTrace {
  long gcpa_stage = -1;                // encoder stage whose feature fed the GCPA
  std::vector<std::string> stage_ops;  // one wiring summary per decoder stage
};

// sigmoid activation -> metric depth via the inverse-disparity convention:
// disp = 1/max_depth + (1/min_depth - 1/max_depth) * sig, depth = 1/disp
template <typename T>
ad::Var<T> disparity_to_depth(const ad::Var<T>& sig, const DisparityRange& range);

// Five-stage (by default) residual downsampling trunk shared by the depth
// and pose networks. Stage i halves resolution; widths come from the spec.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderSpec& spec, long in_channels, ParamSet<T>& params,
          const std::string& prefix, uint64_t seed);
  // N feature maps, shallow to deep, stage i at 1/2^i of the input
  std::vector<ad::Var<T>> forward(const ad::Var<T>& image) const;
  long stages() const { return static_cast<long>(widths_.size()); }
  const std::vector<long>& widths() const { return widths_; }

 private:
  std::vector<long> widths_;
  long in_channels_;
  ParamSet<T>* params_;
  std::string prefix_;
};

// U-Net style decoder with a prompt-attention block at its deepest level,
// emitting S sigmoid disparity activations from full resolution down to
// 1/2^(S-1).
template <typename T>
class DepthNetwork {
 public:
  // input_h/input_w fix the prompt bank's spatial size (deepest feature size)
  DepthNetwork(const NetworkConfig& cfg, long input_h, long input_w, uint64_t seed);

  std::vector<ad::Var<T>> encode(const ad::Var<T>& image) const;
  // index s holds the sigmoid map at 1/2^s resolution
  std::vector<ad::Var<T>> decode(const std::vector<ad::Var<T>>& features) const;
  std::vector<ad::Var<T>> forward(const ad::Var<T>& image) const;

  const NetworkConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  ad::Var<T>& prompts() { return params_.at("depth.prompts"); }

  long gcpa_instances() const { return gcpa_ ? 1 : 0; }
  const Gcpa<T>* gcpa() const { return gcpa_.get(); }
  const DecodeTrace& last_trace() const { return trace_; }

 private:
  NetworkConfig cfg_;
  ParamSet<T> params_;
  std::unique_ptr<Encoder<T>> encoder_;
  std::unique_ptr<Gcpa<T>> gcpa_;
  mutable DecodeTrace trace_;
};

// Pose regressor: both images stacked on channels through an encoder trunk,
// then a 4-layer conv head, global average pooling, and a 0.01 scaling to a
// 6-vector per sample (axis-angle, translation).
template <typename T>
class PoseNetwork {
 public:
  PoseNetwork(const EncoderSpec& spec, uint64_t seed);
  ad::Var<T> forward(const ad::Var<T>& target, const ad::Var<T>& source) const;  // (B,6)
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  ParamSet<T> params_;
  std::unique_ptr<Encoder<T>> encoder_;
  long head_width_ = 0;
};

// one row of a (B,6) pose tensor as a rigid transform
template <typename T>
RigidPose pose_from_vec(const Tensor<T>& vec6, long row);

}  // namespace pm
