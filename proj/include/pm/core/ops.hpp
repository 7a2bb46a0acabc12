#pragma once

#include <vector>

#include "pm/core/autodiff.hpp"

namespace pm::ad {

// elementwise
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> reciprocal(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sqrt_v(const Var<T>& a);
template <typename T> Var<T> exp_v(const Var<T>& a);
template <typename T> Var<T> log_v(const Var<T>& a);
template <typename T> Var<T> abs_v(const Var<T>& a);
template <typename T> Var<T> sin_v(const Var<T>& a);
template <typename T> Var<T> cos_v(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> elu(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> clamp_min(const Var<T>& a, T lo);
template <typename T> Var<T> minimum(const Var<T>& a, const Var<T>& b);
// y[o,m,i] = a[o,m,i] * b[o,i]; b's shape is a's with dim mid_dim removed.
template <typename T> Var<T> mul_mid(const Var<T>& a, const Var<T>& b, long mid_dim);

// reductions
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> mean_all(const Var<T>& a);
// NCHW -> N1HW mean over channels.
template <typename T> Var<T> channel_mean(const Var<T>& a);

// shape
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> permute(const Var<T>& a, std::vector<long> perm);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, long dim);
template <typename T> Var<T> slice(const Var<T>& a, long dim, long start, long len);
// Tiles a along a new leading dim of size n.
template <typename T> Var<T> repeat_leading(const Var<T>& a, long n);

// conv
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride, long pad);
template <typename T>
Var<T> dwconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long pad);

// sampling / padding
template <typename T> Var<T> pad_reflect(const Var<T>& a, long p);
template <typename T> Var<T> upsample(const Var<T>& a, long factor);
// grid: (B,2,Hg,Wg) absolute pixel coords, channel 0 = x, channel 1 = y.
template <typename T> Var<T> bilinear_sample(const Var<T>& src, const Var<T>& grid);
// Adjacent differences along width (dim 3) or height (dim 2) of NCHW.
template <typename T> Var<T> forward_diff_x(const Var<T>& a);
template <typename T> Var<T> forward_diff_y(const Var<T>& a);

// normalization
// Normalizes over the middle extent of an (outer, mid, inner) view of a.
template <typename T>
Var<T> norm_mid(const Var<T>& a, long outer, long mid, long inner, T eps);
// y = a * gamma[c] + beta[c] broadcast over dim 1 of a.
template <typename T>
Var<T> channel_affine(const Var<T>& a, const Var<T>& gamma, const Var<T>& beta);

// attention
template <typename T> Var<T> softmax_lastdim(const Var<T>& a);
template <typename T>
Var<T> qk_scores(const Var<T>& q, const Var<T>& k, const Var<T>& inv_tau, long heads);
template <typename T>
Var<T> attn_mix(const Var<T>& wt, const Var<T>& v, long heads);

// batched matmul: (B,M,K) x (B,K,N) -> (B,M,N)
template <typename T> Var<T> bmm(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator+(const Var<T>& a, T s) { return add_scalar(a, s); }
template <typename T> Var<T> operator*(const Var<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return mul_scalar(a, s); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }

}  // namespace pm::ad
