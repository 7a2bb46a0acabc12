#include <stdexcept>

#include "pm/core/kernels.hpp"
#include "pm/core/ops.hpp"

namespace pm::ad {

template <typename T>
Var<T> norm_mid(const Var<T>& a, long outer, long mid, long inner, T eps) {
  if (outer * mid * inner != a.size())
    throw std::invalid_argument("norm_mid: view does not cover tensor");
  Tensor<T> xhat(a.shape());
  Tensor<T> inv_std({outer, inner});
  kernels::norm_mid_fwd(a.value().data(), xhat.data(), inv_std.data(), outer, mid, inner, eps);
  auto an = a.node();
  return make_op<T>(std::move(xhat), {a},
                    [an, outer, mid, inner, inv_std = std::move(inv_std)](
                        const Tensor<T>& y, const Tensor<T>& g) {
                      kernels::norm_mid_bwd(y.data(), inv_std.data(), g.data(), an->grad_ptr(),
                                            outer, mid, inner);
                    });
}

template <typename T>
Var<T> channel_affine(const Var<T>& a, const Var<T>& gamma, const Var<T>& beta) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw std::invalid_argument("channel_affine: rank must be >= 2");
  const long outer = s[0], c = s[1];
  long inner = 1;
  for (size_t d = 2; d < s.size(); ++d) inner *= s[d];
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("channel_affine: affine size mismatch");
  Tensor<T> y(s);
  const T* x = a.value().data();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  for (long o = 0; o < outer; ++o)
    for (long ci = 0; ci < c; ++ci) {
      const T* xr = x + (o * c + ci) * inner;
      T* yr = y.data() + (o * c + ci) * inner;
      for (long i = 0; i < inner; ++i) yr[i] = xr[i] * gm[ci] + bt[ci];
    }
  auto an = a.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op<T>(std::move(y), {a, gamma, beta},
                    [an, gn, bn, outer, c, inner](const Tensor<T>&, const Tensor<T>& g) {
                      const T* x = an->value.data();
                      const T* gm = gn->value.data();
                      T* ga = an->requires_grad ? an->grad_ptr() : nullptr;
                      T* gg = gn->requires_grad ? gn->grad_ptr() : nullptr;
                      T* gb = bn->requires_grad ? bn->grad_ptr() : nullptr;
                      for (long o = 0; o < outer; ++o)
                        for (long ci = 0; ci < c; ++ci) {
                          const T* gr = g.data() + (o * c + ci) * inner;
                          const T* xr = x + (o * c + ci) * inner;
                          if (ga) {
                            T* gar = ga + (o * c + ci) * inner;
                            for (long i = 0; i < inner; ++i) gar[i] += gr[i] * gm[ci];
                          }
                          if (gg) {
                            T s = 0;
                            for (long i = 0; i < inner; ++i) s += gr[i] * xr[i];
                            gg[ci] += s;
                          }
                          if (gb) {
                            T s = 0;
                            for (long i = 0; i < inner; ++i) s += gr[i];
                            gb[ci] += s;
                          }
                        }
                    });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const Shape& s = a.shape();
  const long n = s.back();
  const long rows = a.size() / n;
  Tensor<T> y(s);
  kernels::softmax_lastdim_fwd(a.value().data(), y.data(), rows, n);
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, rows, n](const Tensor<T>& yv, const Tensor<T>& g) {
    kernels::softmax_lastdim_bwd(yv.data(), g.data(), an->grad_ptr(), rows, n);
  });
}

template <typename T>
Var<T> qk_scores(const Var<T>& q, const Var<T>& k, const Var<T>& inv_tau, long heads) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  if (qs.size() != 4 || ks.size() != 5)
    throw std::invalid_argument("qk_scores: want q (B,C,H,W), k (B,C,Np,H,W)");
  if (qs[0] != ks[0] || qs[1] != ks[1] || qs[2] * qs[3] != ks[3] * ks[4])
    throw std::invalid_argument("qk_scores: q/k layout mismatch");
  if (qs[1] % heads != 0) throw std::invalid_argument("qk_scores: channels % heads != 0");
  if (inv_tau.size() != heads) throw std::invalid_argument("qk_scores: inv_tau size mismatch");
  const long b = qs[0], c_k = qs[1] / heads, n_p = ks[2], hw = qs[2] * qs[3];
  Tensor<T> scores({b, heads, n_p});
  kernels::qk_scores_fwd(q.value().data(), k.value().data(), inv_tau.value().data(),
                         scores.data(), b, heads, c_k, n_p, hw);
  auto qn = q.node();
  auto kn = k.node();
  auto tn = inv_tau.node();
  return make_op<T>(std::move(scores), {q, k, inv_tau},
                    [qn, kn, tn, b, heads, c_k, n_p, hw](const Tensor<T>&, const Tensor<T>& g) {
                      kernels::qk_scores_bwd(qn->value.data(), kn->value.data(), tn->value.data(),
                                             g.data(), qn->grad_ptr(), kn->grad_ptr(),
                                             tn->grad_ptr(), b, heads, c_k, n_p, hw);
                    });
}

template <typename T>
Var<T> attn_mix(const Var<T>& wt, const Var<T>& v, long heads) {
  const Shape& ws = wt.shape();
  const Shape& vs = v.shape();
  if (ws.size() != 3 || vs.size() != 5)
    throw std::invalid_argument("attn_mix: want wt (B,heads,Np), v (B,C,Np,H,W)");
  if (ws[0] != vs[0] || ws[1] != heads || ws[2] != vs[2] || vs[1] % heads != 0)
    throw std::invalid_argument("attn_mix: layout mismatch");
  const long b = vs[0], c_k = vs[1] / heads, n_p = vs[2], hw = vs[3] * vs[4];
  Tensor<T> y({b, vs[1], vs[3], vs[4]});
  kernels::attn_mix_fwd(wt.value().data(), v.value().data(), y.data(), b, heads, c_k, n_p, hw);
  auto wn = wt.node();
  auto vn = v.node();
  return make_op<T>(std::move(y), {wt, v},
                    [wn, vn, b, heads, c_k, n_p, hw](const Tensor<T>&, const Tensor<T>& g) {
                      kernels::attn_mix_bwd(wn->value.data(), vn->value.data(), g.data(),
                                            wn->grad_ptr(), vn->grad_ptr(), b, heads, c_k, n_p,
                                            hw);
                    });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: want (B,M,K) x (B,K,N), got " + shape_str(sa) + " x " +
                                shape_str(sb));
  const long bn_ = sa[0], m = sa[1], kk = sa[2], n = sb[2];
  Tensor<T> y({bn_, m, n});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (long bi = 0; bi < bn_; ++bi)
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) {
        T acc = 0;
        for (long t = 0; t < kk; ++t)
          acc += pa[(bi * m + i) * kk + t] * pb[(bi * kk + t) * n + j];
        y.data()[(bi * m + i) * n + j] = acc;
      }
  auto na = a.node();
  auto nb = b.node();
  return make_op<T>(std::move(y), {a, b},
                    [na, nb, bn_, m, kk, n](const Tensor<T>&, const Tensor<T>& g) {
                      const T* pa = na->value.data();
                      const T* pb = nb->value.data();
                      if (na->requires_grad) {
                        T* ga = na->grad_ptr();
                        for (long bi = 0; bi < bn_; ++bi)
                          for (long i = 0; i < m; ++i)
                            for (long t = 0; t < kk; ++t) {
                              T acc = 0;
                              for (long j = 0; j < n; ++j)
                                acc += g.data()[(bi * m + i) * n + j] * pb[(bi * kk + t) * n + j];
                              ga[(bi * m + i) * kk + t] += acc;
                            }
                      }
                      if (nb->requires_grad) {
                        T* gb = nb->grad_ptr();
                        for (long bi = 0; bi < bn_; ++bi)
                          for (long t = 0; t < kk; ++t)
                            for (long j = 0; j < n; ++j) {
                              T acc = 0;
                              for (long i = 0; i < m; ++i)
                                acc += pa[(bi * m + i) * kk + t] * g.data()[(bi * m + i) * n + j];
                              gb[(bi * kk + t) * n + j] += acc;
                            }
                      }
                    });
}

#define PM_INSTANTIATE_NORM_ATTN(T)                                                      \
  template Var<T> norm_mid<T>(const Var<T>&, long, long, long, T);                       \
  template Var<T> channel_affine<T>(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> softmax_lastdim<T>(const Var<T>&);                                     \
  template Var<T> qk_scores<T>(const Var<T>&, const Var<T>&, const Var<T>&, long);       \
  template Var<T> attn_mix<T>(const Var<T>&, const Var<T>&, long);                       \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&);

PM_INSTANTIATE_NORM_ATTN(float)
PM_INSTANTIATE_NORM_ATTN(double)
#undef PM_INSTANTIATE_NORM_ATTN

}  // namespace pm::ad
