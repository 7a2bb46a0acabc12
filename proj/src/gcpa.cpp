#include "pm/gcpa.hpp"

#include <cmath>
#include <stdexcept>

namespace pm {

using ad::Var;

namespace {

constexpr double kNormEps = 1e-5;

// Runs a 2d convolution independently on every prompt slice of a
// (B,C,Np,H,W) tensor by folding the prompt axis into the batch.
template <typename T, typename Fn>
Var<T> per_prompt(const Var<T>& x, Fn&& conv) {
  const Shape& s = x.shape();
  const long b = s[0], c = s[1], np = s[2], h = s[3], w = s[4];
  auto folded = ad::reshape(ad::permute(x, {0, 2, 1, 3, 4}), {b * np, c, h, w});
  auto y = conv(folded);
  const long co = y.shape()[1];
  return ad::permute(ad::reshape(y, {b, np, co, h, w}), {0, 2, 1, 3, 4});
}

// layer normalization across channels at every position, with affine
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  const Shape& s = x.shape();
  long inner = 1;
  for (size_t d = 2; d < s.size(); ++d) inner *= s[d];
  auto n = ad::norm_mid(x, s[0], s[1], inner, static_cast<T>(kNormEps));
  return ad::channel_affine(n, gamma, beta);
}

}  // namespace

template <typename T>
Gcpa<T>::Gcpa(long channels, long num_prompts, const AttentionConfig& cfg, ParamSet<T>& params,
              const std::string& prefix, uint64_t seed)
    : channels_(channels),
      num_prompts_(num_prompts),
      hidden_(std::lround(cfg.gdfn_expansion * static_cast<double>(channels))),
      cfg_(cfg),
      params_(&params),
      prefix_(prefix) {
  if (channels <= 0 || num_prompts <= 0) throw std::invalid_argument("gcpa: bad sizes");
  if (cfg.heads <= 0 || channels % cfg.heads != 0)
    throw std::invalid_argument("gcpa: head count must divide channels");
  if (!(cfg.gdfn_expansion > 0)) throw std::invalid_argument("gcpa: expansion must be > 0");

  const long c = channels, hid = hidden_;
  auto w = [&](const std::string& name, Shape shape) {
    params.add(prefix + name, init::conv_weight<T>(shape, init::name_seed(prefix + name, seed)));
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    params.add(prefix + name, Tensor<T>::zeros(std::move(shape)));
  };
  auto ln = [&](const std::string& name) {
    params.add(prefix + name + ".g", Tensor<T>({c}, T(1)));
    params.add(prefix + name + ".b", Tensor<T>::zeros({c}));
  };

  w("cgpb.dw.w", {c, 3, 3});
  zeros("cgpb.dw.b", {c});
  w("cgpb.proj.w", {c, c, 1, 1});
  zeros("cgpb.proj.b", {c});
  w("cgpb.gate.w", {c, c, 1, 1});
  zeros("cgpb.gate.b", {c});

  ln("q.ln");
  w("q.conv.w", {c, c, 1, 1});
  w("q.dw.w", {c, 3, 3});
  ln("kv.ln");
  w("k.conv.w", {c, c, 1, 1});
  w("k.dw.w", {c, 3, 3});
  w("v.conv.w", {c, c, 1, 1});
  w("v.dw.w", {c, 3, 3});
  if (cfg.qkv_bias)
    for (const char* n : {"q.conv.b", "q.dw.b", "k.conv.b", "k.dw.b", "v.conv.b", "v.dw.b"})
      zeros(n, {c});

  zeros("attn.log_tau", {cfg.heads});
  w("attn.out.w", {c, c, 1, 1});
  zeros("attn.out.b", {c});

  ln("gdfn.ln");
  w("gdfn.in_a.w", {hid, c, 1, 1});
  zeros("gdfn.in_a.b", {hid});
  w("gdfn.in_b.w", {hid, c, 1, 1});
  zeros("gdfn.in_b.b", {hid});
  w("gdfn.dw_a.w", {hid, 3, 3});
  zeros("gdfn.dw_a.b", {hid});
  w("gdfn.dw_b.w", {hid, 3, 3});
  zeros("gdfn.dw_b.b", {hid});
  w("gdfn.out.w", {c, hid, 1, 1});
  zeros("gdfn.out.b", {c});
}

template <typename T>
Var<T> Gcpa<T>::cgpb(const Var<T>& prompts, const Var<T>& feature) const {
  const Shape& ps = prompts.shape();
  const Shape& fs = feature.shape();
  if (ps.size() != 5 || fs.size() != 4 || ps[0] != fs[0] || ps[1] != fs[1] || ps[1] != channels_)
    throw std::invalid_argument("cgpb: prompt/feature shape mismatch");
  if (ps[3] != fs[2] || ps[4] != fs[3])
    throw std::invalid_argument("cgpb: prompt spatial size must match the feature");
  const long b = ps[0], c = ps[1], np = ps[2], hw = ps[3] * ps[4];

  auto dw = per_prompt(prompts, [&](const Var<T>& x) {
    return ad::dwconv2d(x, p("cgpb.dw.w"), p("cgpb.dw.b"), 1);
  });
  // instance normalization: each (sample, channel, prompt) spatial slice
  auto in = ad::norm_mid(dw, b * c * np, hw, 1, static_cast<T>(kNormEps));
  auto proj = per_prompt(in, [&](const Var<T>& x) {
    return ad::conv2d(x, p("cgpb.proj.w"), p("cgpb.proj.b"), 1, 0);
  });
  auto gate = ad::sigmoid(ad::conv2d(feature, p("cgpb.gate.w"), p("cgpb.gate.b"), 1, 0));
  return ad::add(ad::mul_mid(proj, gate, 2), prompts);
}

template <typename T>
std::tuple<Var<T>, Var<T>, Var<T>> Gcpa<T>::project_qkv(const Var<T>& feature,
                                                        const Var<T>& conditioned) const {
  if (feature.shape()[1] != channels_ || conditioned.shape()[1] != channels_)
    throw std::invalid_argument("project_qkv: channel mismatch");
  auto zero_bias = ad::constant(Tensor<T>::zeros({channels_}));
  auto bias = [&](const std::string& name) -> Var<T> {
    return cfg_.qkv_bias ? p(name) : zero_bias;
  };

  auto fn = layer_norm(feature, p("q.ln.g"), p("q.ln.b"));
  auto q = ad::dwconv2d(ad::conv2d(fn, p("q.conv.w"), bias("q.conv.b"), 1, 0), p("q.dw.w"),
                        bias("q.dw.b"), 1);

  auto pn = layer_norm(conditioned, p("kv.ln.g"), p("kv.ln.b"));
  auto k = per_prompt(pn, [&](const Var<T>& x) {
    return ad::dwconv2d(ad::conv2d(x, p("k.conv.w"), bias("k.conv.b"), 1, 0), p("k.dw.w"),
                        bias("k.dw.b"), 1);
  });
  auto v = per_prompt(pn, [&](const Var<T>& x) {
    return ad::dwconv2d(ad::conv2d(x, p("v.conv.w"), bias("v.conv.b"), 1, 0), p("v.dw.w"),
                        bias("v.dw.b"), 1);
  });
  return {q, k, v};
}

template <typename T>
Var<T> Gcpa<T>::inv_tau() const {
  return ad::exp_v(ad::neg(p("attn.log_tau")));
}

template <typename T>
Var<T> Gcpa<T>::attention_weights(const Var<T>& q, const Var<T>& k) const {
  return ad::softmax_lastdim(ad::qk_scores(q, k, inv_tau(), cfg_.heads));
}

template <typename T>
Var<T> Gcpa<T>::cross_prompting_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                          const Var<T>& feature) const {
  auto wt = attention_weights(q, k);
  auto mixed = ad::attn_mix(wt, v, cfg_.heads);
  return ad::add(ad::conv2d(mixed, p("attn.out.w"), p("attn.out.b"), 1, 0), feature);
}

template <typename T>
Var<T> Gcpa<T>::gdfn(const Var<T>& feature) const {
  auto n = layer_norm(feature, p("gdfn.ln.g"), p("gdfn.ln.b"));
  auto a = ad::dwconv2d(ad::conv2d(n, p("gdfn.in_a.w"), p("gdfn.in_a.b"), 1, 0), p("gdfn.dw_a.w"),
                        p("gdfn.dw_a.b"), 1);
  auto b = ad::dwconv2d(ad::conv2d(n, p("gdfn.in_b.w"), p("gdfn.in_b.b"), 1, 0), p("gdfn.dw_b.w"),
                        p("gdfn.dw_b.b"), 1);
  auto gated = ad::mul(ad::gelu(a), b);
  return ad::add(ad::conv2d(gated, p("gdfn.out.w"), p("gdfn.out.b"), 1, 0), feature);
}

template <typename T>
Var<T> Gcpa<T>::forward(const Var<T>& feature, const Var<T>& prompts) const {
  const Shape& ps = prompts.shape();
  if (ps.size() != 4) throw std::invalid_argument("gcpa: prompts must be (C,Np,H,W)");
  auto banked = ad::repeat_leading(prompts, feature.shape()[0]);
  auto cond = cgpb(banked, feature);
  auto [q, k, v] = project_qkv(feature, cond);
  auto att = cross_prompting_attention(q, k, v, feature);
  return gdfn(att);
}

template <typename T>
Var<T> Gcpa<T>::forward_unconditioned(const Var<T>& feature, const Var<T>& prompts) const {
  const Shape& ps = prompts.shape();
  if (ps.size() != 4) throw std::invalid_argument("gcpa: prompts must be (C,Np,H,W)");
  auto banked = ad::repeat_leading(prompts, feature.shape()[0]);
  auto [q, k, v] = project_qkv(feature, banked);
  auto att = cross_prompting_attention(q, k, v, feature);
  return gdfn(att);
}

template <typename T>
std::vector<std::pair<std::string, long>> Gcpa<T>::param_count_report() const {
  auto rows = params_->count_by_block(prefix_);
  long total = 0;
  for (const auto& [name, n] : rows) total += n;
  rows.emplace_back("total", total);
  return rows;
}

template <typename T>
Tensor<T> make_prompt_bank(long channels, long num_prompts, long h, long w, uint64_t seed) {
  return init::normal<T>({channels, num_prompts, h, w}, 0.02, seed);
}

template class Gcpa<float>;
template class Gcpa<double>;
template Tensor<float> make_prompt_bank<float>(long, long, long, long, uint64_t);
template Tensor<double> make_prompt_bank<double>(long, long, long, long, uint64_t);

}  // namespace pm
