#include <algorithm>
#include <cmath>

#include "pm/core/kernels.hpp"

// Naive serial definitions of every kernel, kept as the comparison point for
// the parallel versions. Each loop nest follows the defining sum directly.

namespace pm::ref {

namespace {

inline long reflect_idx(long i, long n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

template <typename T>
inline void tap(T coord, long n, long& i0, long& i1, T& frac) {
  if (std::isnan(coord)) {
    i0 = i1 = 0;
    frac = coord;
    return;
  }
  T c = std::min(std::max(coord, T(0)), T(n - 1));
  i0 = static_cast<long>(std::floor(c));
  if (i0 > n - 2) i0 = std::max<long>(0, n - 2);
  i1 = std::min(i0 + 1, n - 1);
  frac = c - static_cast<T>(i0);
}

}  // namespace

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long co = 0; co < d.c_out; ++co)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          T acc = bias ? bias[co] : T(0);
          for (long ci = 0; ci < d.c_in; ++ci)
            for (long ky = 0; ky < d.kh; ++ky)
              for (long kx = 0; kx < d.kw; ++kx) {
                const long ys = y * d.stride + ky - d.pad;
                const long xs = x * d.stride + kx - d.pad;
                if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
                acc += w[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx] *
                       in[((b * d.c_in + ci) * d.h_in + ys) * d.w_in + xs];
              }
          out[((b * d.c_out + co) * ho + y) * wo + x] = acc;
        }
}

template <typename T>
void conv2d_bwd_input(const T* w, const T* gout, T* gin, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long co = 0; co < d.c_out; ++co)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          const T g = gout[((b * d.c_out + co) * ho + y) * wo + x];
          for (long ci = 0; ci < d.c_in; ++ci)
            for (long ky = 0; ky < d.kh; ++ky)
              for (long kx = 0; kx < d.kw; ++kx) {
                const long ys = y * d.stride + ky - d.pad;
                const long xs = x * d.stride + kx - d.pad;
                if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
                gin[((b * d.c_in + ci) * d.h_in + ys) * d.w_in + xs] +=
                    g * w[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
              }
        }
}

template <typename T>
void conv2d_bwd_weight(const T* in, const T* gout, T* gw, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long co = 0; co < d.c_out; ++co)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          const T g = gout[((b * d.c_out + co) * ho + y) * wo + x];
          for (long ci = 0; ci < d.c_in; ++ci)
            for (long ky = 0; ky < d.kh; ++ky)
              for (long kx = 0; kx < d.kw; ++kx) {
                const long ys = y * d.stride + ky - d.pad;
                const long xs = x * d.stride + kx - d.pad;
                if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
                gw[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx] +=
                    g * in[((b * d.c_in + ci) * d.h_in + ys) * d.w_in + xs];
              }
        }
}

template <typename T>
void conv2d_bwd_bias(const T* gout, T* gb, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long co = 0; co < d.c_out; ++co)
      for (long i = 0; i < ho * wo; ++i) gb[co] += gout[(b * d.c_out + co) * ho * wo + i];
}

template <typename T>
void dwconv2d_fwd(const T* in, const T* w, const T* bias, T* out, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long c = 0; c < d.channels; ++c)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          T acc = bias ? bias[c] : T(0);
          for (long ky = 0; ky < d.kh; ++ky)
            for (long kx = 0; kx < d.kw; ++kx) {
              const long ys = y + ky - d.pad;
              const long xs = x + kx - d.pad;
              if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
              acc += w[(c * d.kh + ky) * d.kw + kx] *
                     in[((b * d.channels + c) * d.h_in + ys) * d.w_in + xs];
            }
          out[((b * d.channels + c) * ho + y) * wo + x] = acc;
        }
}

template <typename T>
void dwconv2d_bwd_input(const T* w, const T* gout, T* gin, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long c = 0; c < d.channels; ++c)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          const T g = gout[((b * d.channels + c) * ho + y) * wo + x];
          for (long ky = 0; ky < d.kh; ++ky)
            for (long kx = 0; kx < d.kw; ++kx) {
              const long ys = y + ky - d.pad;
              const long xs = x + kx - d.pad;
              if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
              gin[((b * d.channels + c) * d.h_in + ys) * d.w_in + xs] +=
                  g * w[(c * d.kh + ky) * d.kw + kx];
            }
        }
}

template <typename T>
void dwconv2d_bwd_weight(const T* in, const T* gout, T* gw, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long c = 0; c < d.channels; ++c)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          const T g = gout[((b * d.channels + c) * ho + y) * wo + x];
          for (long ky = 0; ky < d.kh; ++ky)
            for (long kx = 0; kx < d.kw; ++kx) {
              const long ys = y + ky - d.pad;
              const long xs = x + kx - d.pad;
              if (ys < 0 || ys >= d.h_in || xs < 0 || xs >= d.w_in) continue;
              gw[(c * d.kh + ky) * d.kw + kx] +=
                  g * in[((b * d.channels + c) * d.h_in + ys) * d.w_in + xs];
            }
        }
}

template <typename T>
void dwconv2d_bwd_bias(const T* gout, T* gb, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  for (long b = 0; b < d.batch; ++b)
    for (long c = 0; c < d.channels; ++c)
      for (long i = 0; i < ho * wo; ++i) gb[c] += gout[(b * d.channels + c) * ho * wo + i];
}

template <typename T>
void bilinear_sample_fwd(const T* src, const T* grid, T* out, long b, long c, long h, long w,
                         long hg, long wg) {
  const long gsz = hg * wg;
  for (long bi = 0; bi < b; ++bi)
    for (long ci = 0; ci < c; ++ci)
      for (long p = 0; p < gsz; ++p) {
        long x0, x1, y0, y1;
        T wx, wy;
        tap(grid[bi * 2 * gsz + p], w, x0, x1, wx);
        tap(grid[(bi * 2 + 1) * gsz + p], h, y0, y1, wy);
        const T* s = src + (bi * c + ci) * h * w;
        out[(bi * c + ci) * gsz + p] =
            (1 - wy) * ((1 - wx) * s[y0 * w + x0] + wx * s[y0 * w + x1]) +
            wy * ((1 - wx) * s[y1 * w + x0] + wx * s[y1 * w + x1]);
      }
}

template <typename T>
void bilinear_sample_bwd_src(const T* grid, const T* gout, T* gsrc, long b, long c, long h,
                             long w, long hg, long wg) {
  const long gsz = hg * wg;
  for (long bi = 0; bi < b; ++bi)
    for (long ci = 0; ci < c; ++ci)
      for (long p = 0; p < gsz; ++p) {
        long x0, x1, y0, y1;
        T wx, wy;
        tap(grid[bi * 2 * gsz + p], w, x0, x1, wx);
        tap(grid[(bi * 2 + 1) * gsz + p], h, y0, y1, wy);
        T* gs = gsrc + (bi * c + ci) * h * w;
        const T g = gout[(bi * c + ci) * gsz + p];
        gs[y0 * w + x0] += (1 - wy) * (1 - wx) * g;
        gs[y0 * w + x1] += (1 - wy) * wx * g;
        gs[y1 * w + x0] += wy * (1 - wx) * g;
        gs[y1 * w + x1] += wy * wx * g;
      }
}

template <typename T>
void bilinear_sample_bwd_grid(const T* src, const T* grid, const T* gout, T* ggrid, long b,
                              long c, long h, long w, long hg, long wg) {
  const long gsz = hg * wg;
  for (long bi = 0; bi < b; ++bi)
    for (long p = 0; p < gsz; ++p) {
      const T u = grid[bi * 2 * gsz + p];
      const T v = grid[(bi * 2 + 1) * gsz + p];
      long x0, x1, y0, y1;
      T wx, wy;
      tap(u, w, x0, x1, wx);
      tap(v, h, y0, y1, wy);
      T du = 0, dv = 0;
      for (long ci = 0; ci < c; ++ci) {
        const T* s = src + (bi * c + ci) * h * w;
        const T g = gout[(bi * c + ci) * gsz + p];
        du += g * ((1 - wy) * (s[y0 * w + x1] - s[y0 * w + x0]) +
                   wy * (s[y1 * w + x1] - s[y1 * w + x0]));
        dv += g * ((1 - wx) * (s[y1 * w + x0] - s[y0 * w + x0]) +
                   wx * (s[y1 * w + x1] - s[y0 * w + x1]));
      }
      if (u > T(0) && u < T(w - 1)) ggrid[bi * 2 * gsz + p] += du;
      if (v > T(0) && v < T(h - 1)) ggrid[(bi * 2 + 1) * gsz + p] += dv;
    }
}

template <typename T>
void upsample_fwd(const T* in, T* out, long b, long c, long h, long w, long r) {
  const long ho = h * r, wo = w * r;
  for (long bi = 0; bi < b; ++bi)
    for (long ci = 0; ci < c; ++ci)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          long x0, x1, y0, y1;
          T wx, wy;
          tap(static_cast<T>((x + T(0.5)) / r - T(0.5)), w, x0, x1, wx);
          tap(static_cast<T>((y + T(0.5)) / r - T(0.5)), h, y0, y1, wy);
          const T* s = in + (bi * c + ci) * h * w;
          out[((bi * c + ci) * ho + y) * wo + x] =
              (1 - wy) * ((1 - wx) * s[y0 * w + x0] + wx * s[y0 * w + x1]) +
              wy * ((1 - wx) * s[y1 * w + x0] + wx * s[y1 * w + x1]);
        }
}

template <typename T>
void upsample_bwd(const T* gout, T* gin, long b, long c, long h, long w, long r) {
  const long ho = h * r, wo = w * r;
  for (long bi = 0; bi < b; ++bi)
    for (long ci = 0; ci < c; ++ci)
      for (long y = 0; y < ho; ++y)
        for (long x = 0; x < wo; ++x) {
          long x0, x1, y0, y1;
          T wx, wy;
          tap(static_cast<T>((x + T(0.5)) / r - T(0.5)), w, x0, x1, wx);
          tap(static_cast<T>((y + T(0.5)) / r - T(0.5)), h, y0, y1, wy);
          T* gs = gin + (bi * c + ci) * h * w;
          const T g = gout[((bi * c + ci) * ho + y) * wo + x];
          gs[y0 * w + x0] += (1 - wy) * (1 - wx) * g;
          gs[y0 * w + x1] += (1 - wy) * wx * g;
          gs[y1 * w + x0] += wy * (1 - wx) * g;
          gs[y1 * w + x1] += wy * wx * g;
        }
}

template <typename T>
void pad_reflect_fwd(const T* in, T* out, long b, long c, long h, long w, long p) {
  const long ho = h + 2 * p, wo = w + 2 * p;
  for (long bc = 0; bc < b * c; ++bc)
    for (long y = 0; y < ho; ++y)
      for (long x = 0; x < wo; ++x)
        out[(bc * ho + y) * wo + x] = in[(bc * h + reflect_idx(y - p, h)) * w + reflect_idx(x - p, w)];
}

template <typename T>
void pad_reflect_bwd(const T* gout, T* gin, long b, long c, long h, long w, long p) {
  const long ho = h + 2 * p, wo = w + 2 * p;
  for (long bc = 0; bc < b * c; ++bc)
    for (long y = 0; y < ho; ++y)
      for (long x = 0; x < wo; ++x)
        gin[(bc * h + reflect_idx(y - p, h)) * w + reflect_idx(x - p, w)] +=
            gout[(bc * ho + y) * wo + x];
}

template <typename T>
void norm_mid_fwd(const T* in, T* xhat, T* inv_std, long outer, long mid, long inner, T eps) {
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      T mean = 0;
      for (long m = 0; m < mid; ++m) mean += in[(o * mid + m) * inner + i];
      mean /= static_cast<T>(mid);
      T var = 0;
      for (long m = 0; m < mid; ++m) {
        const T dv = in[(o * mid + m) * inner + i] - mean;
        var += dv * dv;
      }
      var /= static_cast<T>(mid);
      const T s = T(1) / std::sqrt(var + eps);
      inv_std[o * inner + i] = s;
      for (long m = 0; m < mid; ++m)
        xhat[(o * mid + m) * inner + i] = (in[(o * mid + m) * inner + i] - mean) * s;
    }
}

template <typename T>
void norm_mid_bwd(const T* xhat, const T* inv_std, const T* gout, T* gin, long outer, long mid,
                  long inner) {
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      T gmean = 0, gxmean = 0;
      for (long m = 0; m < mid; ++m) {
        gmean += gout[(o * mid + m) * inner + i];
        gxmean += gout[(o * mid + m) * inner + i] * xhat[(o * mid + m) * inner + i];
      }
      gmean /= static_cast<T>(mid);
      gxmean /= static_cast<T>(mid);
      for (long m = 0; m < mid; ++m)
        gin[(o * mid + m) * inner + i] +=
            inv_std[o * inner + i] * (gout[(o * mid + m) * inner + i] - gmean -
                                      xhat[(o * mid + m) * inner + i] * gxmean);
    }
}

template <typename T>
void qk_scores_fwd(const T* q, const T* k, const T* inv_tau, T* scores, long b, long heads,
                   long c_k, long n_p, long hw) {
  const long channels = heads * c_k;
  for (long bi = 0; bi < b; ++bi)
    for (long hd = 0; hd < heads; ++hd)
      for (long n = 0; n < n_p; ++n) {
        T acc = 0;
        for (long c = 0; c < c_k; ++c)
          for (long p = 0; p < hw; ++p)
            acc += q[(bi * channels + hd * c_k + c) * hw + p] *
                   k[((bi * channels + hd * c_k + c) * n_p + n) * hw + p];
        scores[(bi * heads + hd) * n_p + n] = inv_tau[hd] * acc;
      }
}

template <typename T>
void attn_mix_fwd(const T* wt, const T* v, T* out, long b, long heads, long c_k, long n_p,
                  long hw) {
  const long channels = heads * c_k;
  for (long bi = 0; bi < b; ++bi)
    for (long hd = 0; hd < heads; ++hd)
      for (long c = 0; c < c_k; ++c)
        for (long p = 0; p < hw; ++p) {
          T acc = 0;
          for (long n = 0; n < n_p; ++n)
            acc += wt[(bi * heads + hd) * n_p + n] *
                   v[((bi * channels + hd * c_k + c) * n_p + n) * hw + p];
          out[(bi * channels + hd * c_k + c) * hw + p] = acc;
        }
}

template <typename T>
void softmax_lastdim_fwd(const T* in, T* out, long rows, long n) {
  for (long r = 0; r < rows; ++r) {
    T mx = in[r * n];
    for (long i = 1; i < n; ++i) mx = std::max(mx, in[r * n + i]);
    T sum = 0;
    for (long i = 0; i < n; ++i) {
      out[r * n + i] = std::exp(in[r * n + i] - mx);
      sum += out[r * n + i];
    }
    for (long i = 0; i < n; ++i) out[r * n + i] /= sum;
  }
}

#define PM_INSTANTIATE_REF(T)                                                                   \
  template void conv2d_fwd<T>(const T*, const T*, const T*, T*, const Conv2dDims&);             \
  template void conv2d_bwd_input<T>(const T*, const T*, T*, const Conv2dDims&);                 \
  template void conv2d_bwd_weight<T>(const T*, const T*, T*, const Conv2dDims&);                \
  template void conv2d_bwd_bias<T>(const T*, T*, const Conv2dDims&);                            \
  template void dwconv2d_fwd<T>(const T*, const T*, const T*, T*, const DwConv2dDims&);         \
  template void dwconv2d_bwd_input<T>(const T*, const T*, T*, const DwConv2dDims&);             \
  template void dwconv2d_bwd_weight<T>(const T*, const T*, T*, const DwConv2dDims&);            \
  template void dwconv2d_bwd_bias<T>(const T*, T*, const DwConv2dDims&);                        \
  template void bilinear_sample_fwd<T>(const T*, const T*, T*, long, long, long, long, long,   \
                                       long);                                                  \
  template void bilinear_sample_bwd_src<T>(const T*, const T*, T*, long, long, long, long,     \
                                           long, long);                                        \
  template void bilinear_sample_bwd_grid<T>(const T*, const T*, const T*, T*, long, long,      \
                                            long, long, long, long);                           \
  template void upsample_fwd<T>(const T*, T*, long, long, long, long, long);                   \
  template void upsample_bwd<T>(const T*, T*, long, long, long, long, long);                   \
  template void pad_reflect_fwd<T>(const T*, T*, long, long, long, long, long);                \
  template void pad_reflect_bwd<T>(const T*, T*, long, long, long, long, long);                \
  template void norm_mid_fwd<T>(const T*, T*, T*, long, long, long, T);                        \
  template void norm_mid_bwd<T>(const T*, const T*, const T*, T*, long, long, long);           \
  template void qk_scores_fwd<T>(const T*, const T*, const T*, T*, long, long, long, long,     \
                                 long);                                                        \
  template void attn_mix_fwd<T>(const T*, const T*, T*, long, long, long, long, long);         \
  template void softmax_lastdim_fwd<T>(const T*, T*, long, long);

PM_INSTANTIATE_REF(float)
PM_INSTANTIATE_REF(double)
#undef PM_INSTANTIATE_REF

}  // namespace pm::ref
