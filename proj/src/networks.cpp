#include "pm/networks.hpp"

#include <stdexcept>

namespace pm {

using ad::Var;

template <typename T>
Var<T> disparity_to_depth(const Var<T>& sig, const DisparityRange& range) {
  if (!(range.min_depth > 0) || !(range.min_depth < range.max_depth))
    throw std::invalid_argument("disparity_to_depth: need 0 < min_depth < max_depth");
  for (long i = 0; i < sig.size(); ++i) {
    const T v = sig.value()[i];
    if (!(v > T(0) && v < T(1)))
      throw std::invalid_argument("disparity_to_depth: activations must lie in (0,1)");
  }
  const T lo = static_cast<T>(1.0 / range.max_depth);
  const T span = static_cast<T>(1.0 / range.min_depth - 1.0 / range.max_depth);
  return ad::reciprocal(ad::add_scalar(ad::mul_scalar(sig, span), lo));
}

namespace {

template <typename T>
Var<T> conv_block(const Var<T>& x, const ParamSet<T>& ps, const std::string& name, long stride,
                  long pad) {
  return ad::conv2d(x, ps.at(name + ".w"), ps.at(name + ".b"), stride, pad);
}

template <typename T>
void add_conv(ParamSet<T>& ps, const std::string& name, long out_c, long in_c, long k,
              uint64_t seed) {
  ps.add(name + ".w", init::conv_weight<T>({out_c, in_c, k, k}, init::name_seed(name, seed)));
  ps.add(name + ".b", Tensor<T>::zeros({out_c}));
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(const EncoderSpec& spec, long in_channels, ParamSet<T>& params,
                    const std::string& prefix, uint64_t seed)
    : widths_(spec.stage_widths), in_channels_(in_channels), params_(&params), prefix_(prefix) {
  if (widths_.size() < 3) throw std::invalid_argument("encoder: need at least 3 stages");
  long prev = in_channels;
  for (size_t i = 0; i < widths_.size(); ++i) {
    const long w = widths_[i];
    if (w <= 0) throw std::invalid_argument("encoder: stage widths must be positive");
    const std::string s = prefix + "s" + std::to_string(i + 1);
    add_conv(params, s + ".down", w, prev, 3, seed);
    add_conv(params, s + ".a", w, w, 3, seed);
    add_conv(params, s + ".b", w, w, 3, seed);
    prev = w;
  }
}

template <typename T>
std::vector<Var<T>> Encoder<T>::forward(const Var<T>& image) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != in_channels_)
    throw std::invalid_argument("encoder: want (B," + std::to_string(in_channels_) + ",H,W)");
  const long div = 1L << stages();
  if (s[2] % div != 0 || s[3] % div != 0)
    throw std::invalid_argument("encoder: input size must be divisible by " + std::to_string(div));

  std::vector<Var<T>> feats;
  Var<T> x = image;
  for (long i = 1; i <= stages(); ++i) {
    const std::string st = prefix_ + "s" + std::to_string(i);
    auto d = ad::elu(conv_block(x, *params_, st + ".down", 2, 1));
    auto r = conv_block(ad::elu(conv_block(d, *params_, st + ".a", 1, 1)), *params_, st + ".b", 1,
                        1);
    x = ad::elu(ad::add(d, r));
    feats.push_back(x);
  }
  return feats;
}

template <typename T>
DepthNetwork<T>::DepthNetwork(const NetworkConfig& cfg, long input_h, long input_w, uint64_t seed)
    : cfg_(cfg) {
  const auto& widths = cfg.encoder.stage_widths;
  const long n = static_cast<long>(widths.size());
  if (cfg.scales < 1 || cfg.scales > n)
    throw std::invalid_argument("depth network: scale count must lie in [1, stages]");
  encoder_ = std::make_unique<Encoder<T>>(cfg.encoder, 3, params_, "depth.enc.", seed);
  const long div = 1L << n;
  if (input_h % div != 0 || input_w % div != 0)
    throw std::invalid_argument("depth network: input size must be divisible by 2^stages");

  const long deep = widths[n - 1];
  const long hp = input_h / div, wp = input_w / div;
  if (cfg.use_gcpa) {
    AttentionConfig acfg = cfg.attention;
    gcpa_ = std::make_unique<Gcpa<T>>(deep, cfg.num_prompts, acfg, params_, "depth.gcpa.", seed);
    params_.add("depth.prompts",
                make_prompt_bank<T>(deep, cfg.num_prompts, hp, wp,
                                    init::name_seed("depth.prompts", seed)));
  }

  // decoder: stage i consumes the level-(i+1) feature and the skip F_i
  for (long i = n - 1; i >= 1; --i) {
    const std::string x = "depth.dec.x" + std::to_string(i);
    const long above = widths[i];       // width of F_{i+1} / X_{i+1}
    const long skip = widths[i - 1];    // width of F_i
    const long pre_in = i == n - 1 ? widths[n - 1] : widths[i];
    add_conv(params_, x + ".pre", above, pre_in, 3, seed);
    add_conv(params_, x + ".post", skip, above + skip, 3, seed);
  }
  for (long sidx = 1; sidx < cfg.scales; ++sidx)
    add_conv(params_, "depth.dec.head" + std::to_string(sidx), 1, widths[sidx - 1], 3, seed);
  add_conv(params_, "depth.dec.d0.c1", widths[0], widths[0], 3, seed);
  add_conv(params_, "depth.dec.d0.c2", widths[0], widths[0], 3, seed);
  add_conv(params_, "depth.dec.head0", 1, widths[0], 3, seed);
}

template <typename T>
std::vector<Var<T>> DepthNetwork<T>::encode(const Var<T>& image) const {
  return encoder_->forward(image);
}

template <typename T>
std::vector<Var<T>> DepthNetwork<T>::decode(const std::vector<Var<T>>& features) const {
  const long n = encoder_->stages();
  if (static_cast<long>(features.size()) != n)
    throw std::invalid_argument("decode: want one feature map per encoder stage");
  trace_ = DecodeTrace{};

  auto cblock = [&](const Var<T>& x, const std::string& name) {
    return ad::elu(conv_block(x, params_, name, 1, 1));
  };

  // X_i maps, index i in [1, n-1]; slot 0 unused
  std::vector<Var<T>> X(n);
  for (long i = n - 1; i >= 1; --i) {
    const std::string x = "depth.dec.x" + std::to_string(i);
    Var<T> inner;
    std::string op;
    if (i == n - 1) {
      auto c = cblock(features[n - 1], x + ".pre");
      if (gcpa_) {
        auto prompts = params_.at("depth.prompts");
        inner = cfg_.use_cgpb ? gcpa_->forward(c, prompts)
                              : gcpa_->forward_unconditioned(c, prompts);
        trace_.gcpa_stage = n;
        op = "C([U(GCPA(C(F" + std::to_string(n) + "),P)),F" + std::to_string(i) + "])";
      } else {
        inner = c;
        op = "C([U(C(F" + std::to_string(n) + ")),F" + std::to_string(i) + "])";
      }
    } else {
      inner = cblock(X[i + 1], x + ".pre");
      op = "C([U(C(X" + std::to_string(i + 1) + ")),F" + std::to_string(i) + "])";
    }
    X[i] = cblock(ad::concat<T>({ad::upsample(inner, 2), features[i - 1]}, 1), x + ".post");
    trace_.stage_ops.push_back("X" + std::to_string(i) + "=" + op);
  }

  std::vector<Var<T>> preds(cfg_.scales);
  for (long sidx = 1; sidx < cfg_.scales; ++sidx)
    preds[sidx] = ad::sigmoid(
        conv_block(X[sidx], params_, "depth.dec.head" + std::to_string(sidx), 1, 1));
  auto d0 = cblock(ad::upsample(cblock(X[1], "depth.dec.d0.c1"), 2), "depth.dec.d0.c2");
  preds[0] = ad::sigmoid(conv_block(d0, params_, "depth.dec.head0", 1, 1));
  return preds;
}

template <typename T>
std::vector<Var<T>> DepthNetwork<T>::forward(const Var<T>& image) const {
  return decode(encode(image));
}

template <typename T>
PoseNetwork<T>::PoseNetwork(const EncoderSpec& spec, uint64_t seed) {
  encoder_ = std::make_unique<Encoder<T>>(spec, 6, params_, "pose.enc.", seed);
  head_width_ = spec.stage_widths.back();
  const long w = head_width_;
  add_conv(params_, "pose.head.c1", w, w, 1, seed);
  add_conv(params_, "pose.head.c2", w, w, 3, seed);
  add_conv(params_, "pose.head.c3", w, w, 3, seed);
  add_conv(params_, "pose.head.c4", 6, w, 3, seed);
}

template <typename T>
Var<T> PoseNetwork<T>::forward(const Var<T>& target, const Var<T>& source) const {
  if (target.shape() != source.shape())
    throw std::invalid_argument("pose: target/source shape mismatch");
  auto feats = encoder_->forward(ad::concat<T>({target, source}, 1));
  auto x = feats.back();
  x = ad::elu(conv_block(x, params_, "pose.head.c1", 1, 0));
  x = ad::elu(conv_block(x, params_, "pose.head.c2", 1, 1));
  x = ad::elu(conv_block(x, params_, "pose.head.c3", 1, 1));
  x = conv_block(x, params_, "pose.head.c4", 1, 1);
  const Shape& s = x.shape();
  const long b = s[0], hw = s[2] * s[3];
  auto flat = ad::reshape(x, {b, 6, hw});
  auto ones = ad::constant(Tensor<T>({b, hw, 1}, T(1)));
  auto pooled = ad::reshape(ad::bmm(flat, ones), {b, 6});
  return ad::mul_scalar(pooled, static_cast<T>(0.01) / static_cast<T>(hw));
}

template <typename T>
RigidPose pose_from_vec(const Tensor<T>& vec6, long row) {
  if (vec6.shape().size() != 2 || vec6.dim(1) != 6)
    throw std::invalid_argument("pose_from_vec: want (B,6)");
  const T* v = vec6.data() + row * 6;
  return RigidPose{{double(v[0]), double(v[1]), double(v[2])},
                   {double(v[3]), double(v[4]), double(v[5])}};
}

#define PM_INSTANTIATE_NET(T)                                                       \
  template ad::Var<T> disparity_to_depth<T>(const ad::Var<T>&, const DisparityRange&); \
  template class Encoder<T>;                                                        \
  template class DepthNetwork<T>;                                                   \
  template class PoseNetwork<T>;                                                    \
  template RigidPose pose_from_vec<T>(const Tensor<T>&, long);

PM_INSTANTIATE_NET(float)
PM_INSTANTIATE_NET(double)
#undef PM_INSTANTIATE_NET

}  // namespace pm
