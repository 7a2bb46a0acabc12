#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "pm/core/ops.hpp"
#include "pm/module.hpp"

namespace pm {

struct AttentionConfig {
  long heads = 4;
  bool qkv_bias = true;
  double gdfn_expansion = 2.0;
};

// Cross attention between image features and a bank of learnable prompts:
// the prompts are conditioned on the feature through a sigmoid content gate,
// queries come from the feature, keys and values from the conditioned
// prompts, and a gated feed-forward stage finishes the block. Feature maps
// are (B,C,H,W); prompt tensors are (B,C,Np,H,W).
template <typename T>
class Gcpa {
 public:
  // registers all parameters under `prefix` (e.g. "gcpa.") in `params`
  Gcpa(long channels, long num_prompts, const AttentionConfig& cfg, ParamSet<T>& params,
       const std::string& prefix, uint64_t seed);

  // content-gated prompt conditioning with a residual back to the raw prompts
  ad::Var<T> cgpb(const ad::Var<T>& prompts, const ad::Var<T>& feature) const;

  // Q (B,C,H,W) from the feature, K and V (B,C,Np,H,W) from the conditioned
  // prompts; layer normalization is applied inside
  std::tuple<ad::Var<T>, ad::Var<T>, ad::Var<T>> project_qkv(
      const ad::Var<T>& feature, const ad::Var<T>& conditioned_prompts) const;

  // per-head softmax over the prompt axis of Q.K^T / tau, heads re-merged,
  // projected and added residually to the feature
  ad::Var<T> cross_prompting_attention(const ad::Var<T>& q, const ad::Var<T>& k,
                                       const ad::Var<T>& v, const ad::Var<T>& feature) const;

  // exposes the per-head attention weights for inspection, (B,heads,Np)
  ad::Var<T> attention_weights(const ad::Var<T>& q, const ad::Var<T>& k) const;

  ad::Var<T> gdfn(const ad::Var<T>& feature) const;

  ad::Var<T> forward(const ad::Var<T>& feature, const ad::Var<T>& prompts) const;

  // ablation path: attend over the raw prompt bank without CGPB conditioning
  ad::Var<T> forward_unconditioned(const ad::Var<T>& feature, const ad::Var<T>& prompts) const;

  long channels() const { return channels_; }
  long num_prompts() const { return num_prompts_; }
  const AttentionConfig& config() const { return cfg_; }

  // exact trainable scalar counts per sub-block, plus a "total" row
  std::vector<std::pair<std::string, long>> param_count_report() const;

 private:
  ad::Var<T> inv_tau() const;
  const ad::Var<T>& p(const std::string& name) const { return params_->at(prefix_ + name); }

  long channels_ = 0;
  long num_prompts_ = 0;
  long hidden_ = 0;
  AttentionConfig cfg_;
  ParamSet<T>* params_ = nullptr;
  std::string prefix_;
};

// fresh bank of learnable prompts, (C,Np,H,W), zero-mean Gaussian std 0.02
template <typename T>
Tensor<T> make_prompt_bank(long channels, long num_prompts, long h, long w, uint64_t seed);

}  // namespace pm
