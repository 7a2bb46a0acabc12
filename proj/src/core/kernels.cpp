#include "pm/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pm/core/parallel.hpp"

namespace pm {
namespace {

inline long ceil_div(long a, long b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output index range [lo, hi] such that o*stride + k - pad stays inside
// [0, in_size); empty when hi < lo.
inline void tap_range(long k, long pad, long stride, long in_size, long out_size, long& lo,
                      long& hi) {
  lo = std::max<long>(0, ceil_div(pad - k, stride));
  hi = std::min<long>(out_size - 1, floor_div(in_size - 1 - k + pad, stride));
}

inline long reflect_idx(long i, long n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

namespace kernels {

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  const long in_chw = d.c_in * d.h_in * d.w_in;
  const long out_chw = d.c_out * ho * wo;
#pragma omp parallel for collapse(2) schedule(static) if (d.batch * d.c_out > 1)
  for (long b = 0; b < d.batch; ++b) {
    for (long co = 0; co < d.c_out; ++co) {
      T* oplane = out + b * out_chw + co * ho * wo;
      const T bv = bias ? bias[co] : T(0);
      std::fill(oplane, oplane + ho * wo, bv);
      for (long ci = 0; ci < d.c_in; ++ci) {
        const T* iplane = in + b * in_chw + ci * d.h_in * d.w_in;
        const T* wk = w + (co * d.c_in + ci) * d.kh * d.kw;
        for (long ky = 0; ky < d.kh; ++ky) {
          long ylo, yhi;
          tap_range(ky, d.pad, d.stride, d.h_in, ho, ylo, yhi);
          for (long kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            long xlo, xhi;
            tap_range(kx, d.pad, d.stride, d.w_in, wo, xlo, xhi);
            for (long y = ylo; y <= yhi; ++y) {
              const T* irow = iplane + (y * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
              T* orow = oplane + y * wo;
              if (d.stride == 1) {
#pragma omp simd
                for (long x = xlo; x <= xhi; ++x) orow[x] += wv * irow[x];
              } else {
                for (long x = xlo; x <= xhi; ++x) orow[x] += wv * irow[x * d.stride];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_input(const T* w, const T* gout, T* gin, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  const long in_chw = d.c_in * d.h_in * d.w_in;
  const long out_chw = d.c_out * ho * wo;
#pragma omp parallel for collapse(2) schedule(static) if (d.batch * d.c_in > 1)
  for (long b = 0; b < d.batch; ++b) {
    for (long ci = 0; ci < d.c_in; ++ci) {
      T* giplane = gin + b * in_chw + ci * d.h_in * d.w_in;
      for (long co = 0; co < d.c_out; ++co) {
        const T* goplane = gout + b * out_chw + co * ho * wo;
        const T* wk = w + (co * d.c_in + ci) * d.kh * d.kw;
        for (long ky = 0; ky < d.kh; ++ky) {
          long ylo, yhi;
          tap_range(ky, d.pad, d.stride, d.h_in, ho, ylo, yhi);
          for (long kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            long xlo, xhi;
            tap_range(kx, d.pad, d.stride, d.w_in, wo, xlo, xhi);
            for (long y = ylo; y <= yhi; ++y) {
              const T* grow = goplane + y * wo;
              T* girow = giplane + (y * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
              if (d.stride == 1) {
#pragma omp simd
                for (long x = xlo; x <= xhi; ++x) girow[x] += wv * grow[x];
              } else {
                for (long x = xlo; x <= xhi; ++x) girow[x * d.stride] += wv * grow[x];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_weight(const T* in, const T* gout, T* gw, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  const long in_chw = d.c_in * d.h_in * d.w_in;
  const long out_chw = d.c_out * ho * wo;
#pragma omp parallel for collapse(2) schedule(static) if (d.c_out * d.c_in > 1)
  for (long co = 0; co < d.c_out; ++co) {
    for (long ci = 0; ci < d.c_in; ++ci) {
      T* gwk = gw + (co * d.c_in + ci) * d.kh * d.kw;
      for (long ky = 0; ky < d.kh; ++ky) {
        long ylo, yhi;
        tap_range(ky, d.pad, d.stride, d.h_in, ho, ylo, yhi);
        for (long kx = 0; kx < d.kw; ++kx) {
          long xlo, xhi;
          tap_range(kx, d.pad, d.stride, d.w_in, wo, xlo, xhi);
          T acc = 0;
          for (long b = 0; b < d.batch; ++b) {
            const T* iplane = in + b * in_chw + ci * d.h_in * d.w_in;
            const T* goplane = gout + b * out_chw + co * ho * wo;
            for (long y = ylo; y <= yhi; ++y) {
              const T* irow = iplane + (y * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
              const T* grow = goplane + y * wo;
              if (d.stride == 1) {
                T s = 0;
#pragma omp simd reduction(+ : s)
                for (long x = xlo; x <= xhi; ++x) s += grow[x] * irow[x];
                acc += s;
              } else {
                for (long x = xlo; x <= xhi; ++x) acc += grow[x] * irow[x * d.stride];
              }
            }
          }
          gwk[ky * d.kw + kx] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_bias(const T* gout, T* gb, const Conv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
  const long out_chw = d.c_out * ho * wo;
#pragma omp parallel for schedule(static) if (d.c_out > 1)
  for (long co = 0; co < d.c_out; ++co) {
    T acc = 0;
    for (long b = 0; b < d.batch; ++b) {
      const T* oplane = gout + b * out_chw + co * ho * wo;
      for (long i = 0; i < ho * wo; ++i) acc += oplane[i];
    }
    gb[co] += acc;
  }
}

template <typename T>
void dwconv2d_fwd(const T* in, const T* w, const T* bias, T* out, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
#pragma omp parallel for collapse(2) schedule(static) if (d.batch * d.channels > 1)
  for (long b = 0; b < d.batch; ++b) {
    for (long c = 0; c < d.channels; ++c) {
      const T* iplane = in + (b * d.channels + c) * d.h_in * d.w_in;
      T* oplane = out + (b * d.channels + c) * ho * wo;
      const T* wk = w + c * d.kh * d.kw;
      const T bv = bias ? bias[c] : T(0);
      std::fill(oplane, oplane + ho * wo, bv);
      for (long ky = 0; ky < d.kh; ++ky) {
        long ylo, yhi;
        tap_range(ky, d.pad, 1, d.h_in, ho, ylo, yhi);
        for (long kx = 0; kx < d.kw; ++kx) {
          const T wv = wk[ky * d.kw + kx];
          long xlo, xhi;
          tap_range(kx, d.pad, 1, d.w_in, wo, xlo, xhi);
          for (long y = ylo; y <= yhi; ++y) {
            const T* irow = iplane + (y + ky - d.pad) * d.w_in + kx - d.pad;
            T* orow = oplane + y * wo;
#pragma omp simd
            for (long x = xlo; x <= xhi; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void dwconv2d_bwd_input(const T* w, const T* gout, T* gin, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
#pragma omp parallel for collapse(2) schedule(static) if (d.batch * d.channels > 1)
  for (long b = 0; b < d.batch; ++b) {
    for (long c = 0; c < d.channels; ++c) {
      T* giplane = gin + (b * d.channels + c) * d.h_in * d.w_in;
      const T* goplane = gout + (b * d.channels + c) * ho * wo;
      const T* wk = w + c * d.kh * d.kw;
      for (long ky = 0; ky < d.kh; ++ky) {
        long ylo, yhi;
        tap_range(ky, d.pad, 1, d.h_in, ho, ylo, yhi);
        for (long kx = 0; kx < d.kw; ++kx) {
          const T wv = wk[ky * d.kw + kx];
          long xlo, xhi;
          tap_range(kx, d.pad, 1, d.w_in, wo, xlo, xhi);
          for (long y = ylo; y <= yhi; ++y) {
            const T* grow = goplane + y * wo;
            T* girow = giplane + (y + ky - d.pad) * d.w_in + kx - d.pad;
#pragma omp simd
            for (long x = xlo; x <= xhi; ++x) girow[x] += wv * grow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void dwconv2d_bwd_weight(const T* in, const T* gout, T* gw, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
#pragma omp parallel for schedule(static) if (d.channels > 1)
  for (long c = 0; c < d.channels; ++c) {
    T* gwk = gw + c * d.kh * d.kw;
    for (long ky = 0; ky < d.kh; ++ky) {
      long ylo, yhi;
      tap_range(ky, d.pad, 1, d.h_in, ho, ylo, yhi);
      for (long kx = 0; kx < d.kw; ++kx) {
        long xlo, xhi;
        tap_range(kx, d.pad, 1, d.w_in, wo, xlo, xhi);
        T acc = 0;
        for (long b = 0; b < d.batch; ++b) {
          const T* iplane = in + (b * d.channels + c) * d.h_in * d.w_in;
          const T* goplane = gout + (b * d.channels + c) * ho * wo;
          for (long y = ylo; y <= yhi; ++y) {
            const T* irow = iplane + (y + ky - d.pad) * d.w_in + kx - d.pad;
            const T* grow = goplane + y * wo;
            T s = 0;
#pragma omp simd reduction(+ : s)
            for (long x = xlo; x <= xhi; ++x) s += grow[x] * irow[x];
            acc += s;
          }
        }
        gwk[ky * d.kw + kx] += acc;
      }
    }
  }
}

template <typename T>
void dwconv2d_bwd_bias(const T* gout, T* gb, const DwConv2dDims& d) {
  const long ho = d.h_out(), wo = d.w_out();
#pragma omp parallel for schedule(static) if (d.channels > 1)
  for (long c = 0; c < d.channels; ++c) {
    T acc = 0;
    for (long b = 0; b < d.batch; ++b) {
      const T* oplane = gout + (b * d.channels + c) * ho * wo;
      for (long i = 0; i < ho * wo; ++i) acc += oplane[i];
    }
    gb[c] += acc;
  }
}

namespace {

// Clamped bilinear tap: x0/x1 indices plus the x1 weight. NaN coords keep
// the indices in bounds and poison the weight instead.
template <typename T>
inline void bilinear_tap(T coord, long n, long& i0, long& i1, T& frac) {
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
void bilinear_sample_fwd(const T* src, const T* grid, T* out, long b, long c, long h, long w,
                         long hg, long wg) {
  const long gsz = hg * wg;
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      const T* splane = src + (bi * c + ci) * h * w;
      const T* gu = grid + bi * 2 * gsz;
      const T* gv = gu + gsz;
      T* oplane = out + (bi * c + ci) * gsz;
      for (long p = 0; p < gsz; ++p) {
        long x0, x1, y0, y1;
        T wx, wy;
        bilinear_tap(gu[p], w, x0, x1, wx);
        bilinear_tap(gv[p], h, y0, y1, wy);
        const T top = (1 - wx) * splane[y0 * w + x0] + wx * splane[y0 * w + x1];
        const T bot = (1 - wx) * splane[y1 * w + x0] + wx * splane[y1 * w + x1];
        oplane[p] = (1 - wy) * top + wy * bot;
      }
    }
  }
}

template <typename T>
void bilinear_sample_bwd_src(const T* grid, const T* gout, T* gsrc, long b, long c, long h, long w,
                             long hg, long wg) {
  const long gsz = hg * wg;
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      T* gplane = gsrc + (bi * c + ci) * h * w;
      const T* gu = grid + bi * 2 * gsz;
      const T* gv = gu + gsz;
      const T* goplane = gout + (bi * c + ci) * gsz;
      for (long p = 0; p < gsz; ++p) {
        long x0, x1, y0, y1;
        T wx, wy;
        bilinear_tap(gu[p], w, x0, x1, wx);
        bilinear_tap(gv[p], h, y0, y1, wy);
        const T g = goplane[p];
        gplane[y0 * w + x0] += (1 - wy) * (1 - wx) * g;
        gplane[y0 * w + x1] += (1 - wy) * wx * g;
        gplane[y1 * w + x0] += wy * (1 - wx) * g;
        gplane[y1 * w + x1] += wy * wx * g;
      }
    }
  }
}

template <typename T>
void bilinear_sample_bwd_grid(const T* src, const T* grid, const T* gout, T* ggrid, long b, long c,
                              long h, long w, long hg, long wg) {
  const long gsz = hg * wg;
#pragma omp parallel for schedule(static) if (b > 1)
  for (long bi = 0; bi < b; ++bi) {
    const T* gu = grid + bi * 2 * gsz;
    const T* gv = gu + gsz;
    T* ggu = ggrid + bi * 2 * gsz;
    T* ggv = ggu + gsz;
    for (long p = 0; p < gsz; ++p) {
      const T u = gu[p], v = gv[p];
      const bool inu = u > T(0) && u < T(w - 1);
      const bool inv = v > T(0) && v < T(h - 1);
      if (!inu && !inv) continue;
      long x0, x1, y0, y1;
      T wx, wy;
      bilinear_tap(u, w, x0, x1, wx);
      bilinear_tap(v, h, y0, y1, wy);
      T du = 0, dv = 0;
      for (long ci = 0; ci < c; ++ci) {
        const T* s = src + (bi * c + ci) * h * w;
        const T g = gout[(bi * c + ci) * gsz + p];
        const T s00 = s[y0 * w + x0], s01 = s[y0 * w + x1];
        const T s10 = s[y1 * w + x0], s11 = s[y1 * w + x1];
        du += g * ((1 - wy) * (s01 - s00) + wy * (s11 - s10));
        dv += g * ((1 - wx) * (s10 - s00) + wx * (s11 - s01));
      }
      if (inu) ggu[p] += du;
      if (inv) ggv[p] += dv;
    }
  }
}

namespace {

template <typename T>
void upsample_tables(long n, long r, std::vector<long>& i0, std::vector<T>& frac) {
  const long no = n * r;
  i0.resize(no);
  frac.resize(no);
  for (long o = 0; o < no; ++o) {
    long a, b;
    T f;
    bilinear_tap(static_cast<T>((o + T(0.5)) / r - T(0.5)), n, a, b, f);
    i0[o] = a;
    frac[o] = f;
  }
}

}  // namespace

template <typename T>
void upsample_fwd(const T* in, T* out, long b, long c, long h, long w, long r) {
  const long ho = h * r, wo = w * r;
  std::vector<long> y0, x0;
  std::vector<T> wy, wx;
  upsample_tables(h, r, y0, wy);
  upsample_tables(w, r, x0, wx);
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      const T* iplane = in + (bi * c + ci) * h * w;
      T* oplane = out + (bi * c + ci) * ho * wo;
      for (long y = 0; y < ho; ++y) {
        const long ya = y0[y], yb = std::min(ya + 1, h - 1);
        const T fy = wy[y];
        const T* r0 = iplane + ya * w;
        const T* r1 = iplane + yb * w;
        T* orow = oplane + y * wo;
        for (long x = 0; x < wo; ++x) {
          const long xa = x0[x], xb = std::min(xa + 1, w - 1);
          const T fx = wx[x];
          orow[x] = (1 - fy) * ((1 - fx) * r0[xa] + fx * r0[xb]) +
                    fy * ((1 - fx) * r1[xa] + fx * r1[xb]);
        }
      }
    }
  }
}

template <typename T>
void upsample_bwd(const T* gout, T* gin, long b, long c, long h, long w, long r) {
  const long ho = h * r, wo = w * r;
  std::vector<long> y0, x0;
  std::vector<T> wy, wx;
  upsample_tables(h, r, y0, wy);
  upsample_tables(w, r, x0, wx);
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      T* giplane = gin + (bi * c + ci) * h * w;
      const T* goplane = gout + (bi * c + ci) * ho * wo;
      for (long y = 0; y < ho; ++y) {
        const long ya = y0[y], yb = std::min(ya + 1, h - 1);
        const T fy = wy[y];
        const T* grow = goplane + y * wo;
        for (long x = 0; x < wo; ++x) {
          const long xa = x0[x], xb = std::min(xa + 1, w - 1);
          const T fx = wx[x];
          const T g = grow[x];
          giplane[ya * w + xa] += (1 - fy) * (1 - fx) * g;
          giplane[ya * w + xb] += (1 - fy) * fx * g;
          giplane[yb * w + xa] += fy * (1 - fx) * g;
          giplane[yb * w + xb] += fy * fx * g;
        }
      }
    }
  }
}

template <typename T>
void pad_reflect_fwd(const T* in, T* out, long b, long c, long h, long w, long p) {
  const long ho = h + 2 * p, wo = w + 2 * p;
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      const T* iplane = in + (bi * c + ci) * h * w;
      T* oplane = out + (bi * c + ci) * ho * wo;
      for (long y = 0; y < ho; ++y) {
        const long iy = reflect_idx(y - p, h);
        for (long x = 0; x < wo; ++x) oplane[y * wo + x] = iplane[iy * w + reflect_idx(x - p, w)];
      }
    }
  }
}

template <typename T>
void pad_reflect_bwd(const T* gout, T* gin, long b, long c, long h, long w, long p) {
  const long ho = h + 2 * p, wo = w + 2 * p;
#pragma omp parallel for collapse(2) schedule(static) if (b * c > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long ci = 0; ci < c; ++ci) {
      T* giplane = gin + (bi * c + ci) * h * w;
      const T* goplane = gout + (bi * c + ci) * ho * wo;
      for (long y = 0; y < ho; ++y) {
        const long iy = reflect_idx(y - p, h);
        for (long x = 0; x < wo; ++x)
          giplane[iy * w + reflect_idx(x - p, w)] += goplane[y * wo + x];
      }
    }
  }
}

template <typename T>
void norm_mid_fwd(const T* in, T* xhat, T* inv_std, long outer, long mid, long inner, T eps) {
#pragma omp parallel for schedule(static) if (outer > 1)
  for (long o = 0; o < outer; ++o) {
    const T* x = in + o * mid * inner;
    T* y = xhat + o * mid * inner;
    T* is = inv_std + o * inner;
    for (long i = 0; i < inner; ++i) {
      T mean = 0;
      for (long m = 0; m < mid; ++m) mean += x[m * inner + i];
      mean /= static_cast<T>(mid);
      T var = 0;
      for (long m = 0; m < mid; ++m) {
        const T dv = x[m * inner + i] - mean;
        var += dv * dv;
      }
      var /= static_cast<T>(mid);
      const T s = T(1) / std::sqrt(var + eps);
      is[i] = s;
      for (long m = 0; m < mid; ++m) y[m * inner + i] = (x[m * inner + i] - mean) * s;
    }
  }
}

template <typename T>
void norm_mid_bwd(const T* xhat, const T* inv_std, const T* gout, T* gin, long outer, long mid,
                  long inner) {
#pragma omp parallel for schedule(static) if (outer > 1)
  for (long o = 0; o < outer; ++o) {
    const T* xh = xhat + o * mid * inner;
    const T* g = gout + o * mid * inner;
    T* gi = gin + o * mid * inner;
    const T* is = inv_std + o * inner;
    for (long i = 0; i < inner; ++i) {
      T gmean = 0, gxmean = 0;
      for (long m = 0; m < mid; ++m) {
        gmean += g[m * inner + i];
        gxmean += g[m * inner + i] * xh[m * inner + i];
      }
      gmean /= static_cast<T>(mid);
      gxmean /= static_cast<T>(mid);
      for (long m = 0; m < mid; ++m)
        gi[m * inner + i] += is[i] * (g[m * inner + i] - gmean - xh[m * inner + i] * gxmean);
    }
  }
}

template <typename T>
void qk_scores_fwd(const T* q, const T* k, const T* inv_tau, T* scores, long b, long heads,
                   long c_k, long n_p, long hw) {
  const long channels = heads * c_k;
#pragma omp parallel for collapse(2) schedule(static) if (b * heads > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long hd = 0; hd < heads; ++hd) {
      T* srow = scores + (bi * heads + hd) * n_p;
      for (long n = 0; n < n_p; ++n) {
        T acc = 0;
        for (long c = 0; c < c_k; ++c) {
          const long ch = hd * c_k + c;
          const T* qrow = q + (bi * channels + ch) * hw;
          const T* krow = k + ((bi * channels + ch) * n_p + n) * hw;
          T s = 0;
#pragma omp simd reduction(+ : s)
          for (long p = 0; p < hw; ++p) s += qrow[p] * krow[p];
          acc += s;
        }
        srow[n] = inv_tau[hd] * acc;
      }
    }
  }
}

template <typename T>
void qk_scores_bwd(const T* q, const T* k, const T* inv_tau, const T* gscores, T* gq, T* gk,
                   T* ginv_tau, long b, long heads, long c_k, long n_p, long hw) {
  const long channels = heads * c_k;
#pragma omp parallel for collapse(2) schedule(static) if (b * heads > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long hd = 0; hd < heads; ++hd) {
      const T* gs = gscores + (bi * heads + hd) * n_p;
      for (long c = 0; c < c_k; ++c) {
        const long ch = hd * c_k + c;
        const T* qrow = q + (bi * channels + ch) * hw;
        T* gqrow = gq + (bi * channels + ch) * hw;
        for (long n = 0; n < n_p; ++n) {
          const T* krow = k + ((bi * channels + ch) * n_p + n) * hw;
          T* gkrow = gk + ((bi * channels + ch) * n_p + n) * hw;
          const T gv = gs[n] * inv_tau[hd];
#pragma omp simd
          for (long p = 0; p < hw; ++p) {
            gqrow[p] += gv * krow[p];
            gkrow[p] += gv * qrow[p];
          }
        }
      }
    }
  }
  // Scalar per head; serial keeps the accumulation order fixed.
  for (long hd = 0; hd < heads; ++hd) {
    T acc = 0;
    for (long bi = 0; bi < b; ++bi) {
      const T* gs = gscores + (bi * heads + hd) * n_p;
      for (long n = 0; n < n_p; ++n) {
        T dot = 0;
        for (long c = 0; c < c_k; ++c) {
          const long ch = hd * c_k + c;
          const T* qrow = q + (bi * channels + ch) * hw;
          const T* krow = k + ((bi * channels + ch) * n_p + n) * hw;
          for (long p = 0; p < hw; ++p) dot += qrow[p] * krow[p];
        }
        acc += gs[n] * dot;
      }
    }
    ginv_tau[hd] += acc;
  }
}

template <typename T>
void attn_mix_fwd(const T* wt, const T* v, T* out, long b, long heads, long c_k, long n_p,
                  long hw) {
  const long channels = heads * c_k;
#pragma omp parallel for collapse(2) schedule(static) if (b * heads > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long hd = 0; hd < heads; ++hd) {
      const T* wrow = wt + (bi * heads + hd) * n_p;
      for (long c = 0; c < c_k; ++c) {
        const long ch = hd * c_k + c;
        T* orow = out + (bi * channels + ch) * hw;
        std::fill(orow, orow + hw, T(0));
        for (long n = 0; n < n_p; ++n) {
          const T* vrow = v + ((bi * channels + ch) * n_p + n) * hw;
          const T wv = wrow[n];
#pragma omp simd
          for (long p = 0; p < hw; ++p) orow[p] += wv * vrow[p];
        }
      }
    }
  }
}

template <typename T>
void attn_mix_bwd(const T* wt, const T* v, const T* gout, T* gwt, T* gv, long b, long heads,
                  long c_k, long n_p, long hw) {
  const long channels = heads * c_k;
#pragma omp parallel for collapse(2) schedule(static) if (b * heads > 1)
  for (long bi = 0; bi < b; ++bi) {
    for (long hd = 0; hd < heads; ++hd) {
      const T* wrow = wt + (bi * heads + hd) * n_p;
      T* gwrow = gwt + (bi * heads + hd) * n_p;
      for (long c = 0; c < c_k; ++c) {
        const long ch = hd * c_k + c;
        const T* grow = gout + (bi * channels + ch) * hw;
        for (long n = 0; n < n_p; ++n) {
          const T* vrow = v + ((bi * channels + ch) * n_p + n) * hw;
          T* gvrow = gv + ((bi * channels + ch) * n_p + n) * hw;
          const T wv = wrow[n];
          T s = 0;
#pragma omp simd reduction(+ : s)
          for (long p = 0; p < hw; ++p) {
            s += grow[p] * vrow[p];
            gvrow[p] += wv * grow[p];
          }
          gwrow[n] += s;
        }
      }
    }
  }
}

template <typename T>
void softmax_lastdim_fwd(const T* in, T* out, long rows, long n) {
#pragma omp parallel for schedule(static) if (rows > 1)
  for (long r = 0; r < rows; ++r) {
    const T* x = in + r * n;
    T* y = out + r * n;
    T mx = x[0];
    for (long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T sum = 0;
    for (long i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const T inv = T(1) / sum;
    for (long i = 0; i < n; ++i) y[i] *= inv;
  }
}

template <typename T>
void softmax_lastdim_bwd(const T* y, const T* gout, T* gin, long rows, long n) {
#pragma omp parallel for schedule(static) if (rows > 1)
  for (long r = 0; r < rows; ++r) {
    const T* yr = y + r * n;
    const T* g = gout + r * n;
    T* gi = gin + r * n;
    T dot = 0;
    for (long i = 0; i < n; ++i) dot += yr[i] * g[i];
    for (long i = 0; i < n; ++i) gi[i] += yr[i] * (g[i] - dot);
  }
}

#define PM_INSTANTIATE_KERNELS(T)                                                               \
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
  template void qk_scores_bwd<T>(const T*, const T*, const T*, const T*, T*, T*, T*, long,     \
                                 long, long, long, long);                                      \
  template void attn_mix_fwd<T>(const T*, const T*, T*, long, long, long, long, long);         \
  template void attn_mix_bwd<T>(const T*, const T*, const T*, T*, T*, long, long, long, long,  \
                                long);                                                         \
  template void softmax_lastdim_fwd<T>(const T*, T*, long, long);                              \
  template void softmax_lastdim_bwd<T>(const T*, const T*, T*, long, long);

PM_INSTANTIATE_KERNELS(float)
PM_INSTANTIATE_KERNELS(double)
#undef PM_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace pm
