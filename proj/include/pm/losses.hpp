#pragma once

#include <vector>

#include "pm/core/ops.hpp"
#include "pm/core/tensor.hpp"

namespace pm {

struct LossWeights {
  double lambda_p = 1.0;
  double lambda_sd = 4.0;
  double lambda_smooth = 0.001;
};

struct PhotometricConfig {
  double alpha = 0.85;
  long ssim_window = 3;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace loss {

// Channel-averaged local SSIM map, (B,C,H,W) x2 -> (B,1,H,W), values in [-1,1].
template <typename T>
ad::Var<T> ssim(const ad::Var<T>& a, const ad::Var<T>& b, const PhotometricConfig& cfg = {});

// pe = (alpha/2)(1 - SSIM) + (1-alpha)|a-b| with the L1 term channel-averaged.
template <typename T>
ad::Var<T> photometric_error(const ad::Var<T>& a, const ad::Var<T>& b,
                             const PhotometricConfig& cfg = {});

template <typename T>
struct Reconstruction {
  ad::Var<T> image;
  Tensor<uint8_t> valid;  // (B,1,H,W)
};

// Per-pixel minimum photometric error over reconstructions, averaged over
// pixels covered by at least one valid reconstruction.
template <typename T>
ad::Var<T> min_reprojection_loss(const ad::Var<T>& target,
                                 const std::vector<Reconstruction<T>>& recons,
                                 const PhotometricConfig& cfg = {});

// mean((1/D_h - 1/D_e)^2); the easy branch must already be detached.
template <typename T>
ad::Var<T> self_distillation_loss(const ad::Var<T>& depth_hard, const ad::Var<T>& depth_easy);

// Edge-aware first-order smoothness on mean-normalized disparity.
template <typename T>
ad::Var<T> smoothness_loss(const ad::Var<T>& disparity, const ad::Var<T>& image);

template <typename T>
struct ScaleLosses {
  ad::Var<T> photometric;
  ad::Var<T> self_distillation;
  ad::Var<T> smoothness;
};

// (1/S) * sum_s (lp*L_p + lsd*L_sd + lsm*L_smooth)
template <typename T>
ad::Var<T> total_loss(const std::vector<ScaleLosses<T>>& per_scale, const LossWeights& w);

}  // namespace loss
}  // namespace pm
