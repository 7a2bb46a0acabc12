#pragma once

#include <cstdint>

namespace pm {

/// Geometry of one 2-d convolution. Zero padding, square stride.
struct Conv2dDims {
  long batch = 1;
  long c_in = 1, h_in = 1, w_in = 1;
  long c_out = 1, kh = 1, kw = 1;
  long stride = 1, pad = 0;

  long h_out() const { return (h_in + 2 * pad - kh) / stride + 1; }
  long w_out() const { return (w_in + 2 * pad - kw) / stride + 1; }
};

/// Depthwise variant: one kh x kw kernel per channel, stride 1.
struct DwConv2dDims {
  long batch = 1;
  long channels = 1, h_in = 1, w_in = 1;
  long kh = 1, kw = 1;
  long pad = 0;

  long h_out() const { return h_in + 2 * pad - kh + 1; }
  long w_out() const { return w_in + 2 * pad - kw + 1; }
};

// Production kernels: OpenMP-parallel over independent output elements, so
// results do not depend on the thread count. All backward functions
// accumulate (+=) into the destination buffer.
namespace kernels {

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_input(const T* w, const T* gout, T* gin, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_weight(const T* in, const T* gout, T* gw, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_bias(const T* gout, T* gb, const Conv2dDims& d);

template <typename T>
void dwconv2d_fwd(const T* in, const T* w, const T* bias, T* out, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_input(const T* w, const T* gout, T* gin, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_weight(const T* in, const T* gout, T* gw, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_bias(const T* gout, T* gb, const DwConv2dDims& d);

// grid holds absolute pixel coordinates, channel 0 = u (x), channel 1 = v (y).
// Out-of-range coordinates are border-clamped.
template <typename T>
void bilinear_sample_fwd(const T* src, const T* grid, T* out, long b, long c, long h, long w,
                         long hg, long wg);
template <typename T>
void bilinear_sample_bwd_src(const T* grid, const T* gout, T* gsrc, long b, long c, long h, long w,
                             long hg, long wg);
template <typename T>
void bilinear_sample_bwd_grid(const T* src, const T* grid, const T* gout, T* ggrid, long b, long c,
                              long h, long w, long hg, long wg);

// Integer-factor bilinear upsampling, half-pixel-centre convention.
template <typename T>
void upsample_fwd(const T* in, T* out, long b, long c, long h, long w, long r);
template <typename T>
void upsample_bwd(const T* gout, T* gin, long b, long c, long h, long w, long r);

template <typename T>
void pad_reflect_fwd(const T* in, T* out, long b, long c, long h, long w, long p);
template <typename T>
void pad_reflect_bwd(const T* gout, T* gin, long b, long c, long h, long w, long p);

// Normalizes across the middle axis of an (outer, mid, inner) view:
// xhat = (x - mean) / sqrt(var + eps). Saves xhat and inv_std for backward.
template <typename T>
void norm_mid_fwd(const T* in, T* xhat, T* inv_std, long outer, long mid, long inner, T eps);
template <typename T>
void norm_mid_bwd(const T* xhat, const T* inv_std, const T* gout, T* gin, long outer, long mid,
                  long inner);

// Cross-attention between one query vector and n_p prompt vectors per head,
// on native (B, C, HW) / (B, C, N, HW) layouts; c_k = C / heads.
template <typename T>
void qk_scores_fwd(const T* q, const T* k, const T* inv_tau, T* scores, long b, long heads,
                   long c_k, long n_p, long hw);
template <typename T>
void qk_scores_bwd(const T* q, const T* k, const T* inv_tau, const T* gscores, T* gq, T* gk,
                   T* ginv_tau, long b, long heads, long c_k, long n_p, long hw);
template <typename T>
void attn_mix_fwd(const T* wt, const T* v, T* out, long b, long heads, long c_k, long n_p, long hw);
template <typename T>
void attn_mix_bwd(const T* wt, const T* v, const T* gout, T* gwt, T* gv, long b, long heads,
                  long c_k, long n_p, long hw);

template <typename T>
void softmax_lastdim_fwd(const T* in, T* out, long rows, long n);
template <typename T>
void softmax_lastdim_bwd(const T* y, const T* gout, T* gin, long rows, long n);

}  // namespace kernels

// Serial reference implementations: the literal definitions, naive loop
// order, scatter-form backward where that is the natural transcription.
// Tests hold the parallel kernels to these.
namespace ref {

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_input(const T* w, const T* gout, T* gin, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_weight(const T* in, const T* gout, T* gw, const Conv2dDims& d);
template <typename T>
void conv2d_bwd_bias(const T* gout, T* gb, const Conv2dDims& d);

template <typename T>
void dwconv2d_fwd(const T* in, const T* w, const T* bias, T* out, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_input(const T* w, const T* gout, T* gin, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_weight(const T* in, const T* gout, T* gw, const DwConv2dDims& d);
template <typename T>
void dwconv2d_bwd_bias(const T* gout, T* gb, const DwConv2dDims& d);

template <typename T>
void bilinear_sample_fwd(const T* src, const T* grid, T* out, long b, long c, long h, long w,
                         long hg, long wg);
template <typename T>
void bilinear_sample_bwd_src(const T* grid, const T* gout, T* gsrc, long b, long c, long h, long w,
                             long hg, long wg);
template <typename T>
void bilinear_sample_bwd_grid(const T* src, const T* grid, const T* gout, T* ggrid, long b, long c,
                              long h, long w, long hg, long wg);

template <typename T>
void upsample_fwd(const T* in, T* out, long b, long c, long h, long w, long r);
template <typename T>
void upsample_bwd(const T* gout, T* gin, long b, long c, long h, long w, long r);

template <typename T>
void pad_reflect_fwd(const T* in, T* out, long b, long c, long h, long w, long p);
template <typename T>
void pad_reflect_bwd(const T* gout, T* gin, long b, long c, long h, long w, long p);

template <typename T>
void norm_mid_fwd(const T* in, T* xhat, T* inv_std, long outer, long mid, long inner, T eps);
template <typename T>
void norm_mid_bwd(const T* xhat, const T* inv_std, const T* gout, T* gin, long outer, long mid,
                  long inner);

template <typename T>
void qk_scores_fwd(const T* q, const T* k, const T* inv_tau, T* scores, long b, long heads,
                   long c_k, long n_p, long hw);
template <typename T>
void attn_mix_fwd(const T* wt, const T* v, T* out, long b, long heads, long c_k, long n_p, long hw);
template <typename T>
void softmax_lastdim_fwd(const T* in, T* out, long rows, long n);

}  // namespace ref

}  // namespace pm
