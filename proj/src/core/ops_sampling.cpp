#include <stdexcept>

#include "pm/core/kernels.hpp"
#include "pm/core/ops.hpp"

namespace pm::ad {

template <typename T>
Var<T> pad_reflect(const Var<T>& a, long p) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("pad_reflect expects NCHW");
  if (p >= s[2] || p >= s[3]) throw std::invalid_argument("pad_reflect: pad too large");
  const long b = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> y({b, c, h + 2 * p, w + 2 * p});
  kernels::pad_reflect_fwd(a.value().data(), y.data(), b, c, h, w, p);
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, b, c, h, w, p](const Tensor<T>&, const Tensor<T>& g) {
    kernels::pad_reflect_bwd(g.data(), an->grad_ptr(), b, c, h, w, p);
  });
}

template <typename T>
Var<T> upsample(const Var<T>& a, long factor) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample expects NCHW");
  if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1");
  const long b = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> y({b, c, h * factor, w * factor});
  kernels::upsample_fwd(a.value().data(), y.data(), b, c, h, w, factor);
  auto an = a.node();
  return make_op<T>(std::move(y), {a},
                    [an, b, c, h, w, factor](const Tensor<T>&, const Tensor<T>& g) {
                      kernels::upsample_bwd(g.data(), an->grad_ptr(), b, c, h, w, factor);
                    });
}

template <typename T>
Var<T> bilinear_sample(const Var<T>& src, const Var<T>& grid) {
  const Shape& ss = src.shape();
  const Shape& gs = grid.shape();
  if (ss.size() != 4 || gs.size() != 4 || gs[1] != 2 || gs[0] != ss[0])
    throw std::invalid_argument("bilinear_sample: want src NCHW and grid (N,2,Hg,Wg)");
  const long b = ss[0], c = ss[1], h = ss[2], w = ss[3];
  const long hg = gs[2], wg = gs[3];
  Tensor<T> y({b, c, hg, wg});
  kernels::bilinear_sample_fwd(src.value().data(), grid.value().data(), y.data(), b, c, h, w, hg,
                               wg);
  auto sn = src.node();
  auto gn = grid.node();
  return make_op<T>(std::move(y), {src, grid},
                    [sn, gn, b, c, h, w, hg, wg](const Tensor<T>&, const Tensor<T>& g) {
                      if (sn->requires_grad)
                        kernels::bilinear_sample_bwd_src(gn->value.data(), g.data(),
                                                         sn->grad_ptr(), b, c, h, w, hg, wg);
                      if (gn->requires_grad)
                        kernels::bilinear_sample_bwd_grid(sn->value.data(), gn->value.data(),
                                                          g.data(), gn->grad_ptr(), b, c, h, w,
                                                          hg, wg);
                    });
}

template <typename T>
Var<T> forward_diff_x(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4 || s[3] < 2) throw std::invalid_argument("forward_diff_x expects NCHW, W>=2");
  const long planes = s[0] * s[1] * s[2], w = s[3];
  Tensor<T> y({s[0], s[1], s[2], w - 1});
  const T* x = a.value().data();
  for (long p = 0; p < planes; ++p)
    for (long i = 0; i < w - 1; ++i)
      y.data()[p * (w - 1) + i] = x[p * w + i + 1] - x[p * w + i];
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, planes, w](const Tensor<T>&, const Tensor<T>& g) {
    T* ga = an->grad_ptr();
    for (long p = 0; p < planes; ++p)
      for (long i = 0; i < w - 1; ++i) {
        const T gv = g.data()[p * (w - 1) + i];
        ga[p * w + i + 1] += gv;
        ga[p * w + i] -= gv;
      }
  });
}

template <typename T>
Var<T> forward_diff_y(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4 || s[2] < 2) throw std::invalid_argument("forward_diff_y expects NCHW, H>=2");
  const long planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> y({s[0], s[1], h - 1, w});
  const T* x = a.value().data();
  for (long p = 0; p < planes; ++p)
    for (long r = 0; r < h - 1; ++r)
      for (long i = 0; i < w; ++i)
        y.data()[(p * (h - 1) + r) * w + i] = x[(p * h + r + 1) * w + i] - x[(p * h + r) * w + i];
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, planes, h, w](const Tensor<T>&, const Tensor<T>& g) {
    T* ga = an->grad_ptr();
    for (long p = 0; p < planes; ++p)
      for (long r = 0; r < h - 1; ++r)
        for (long i = 0; i < w; ++i) {
          const T gv = g.data()[(p * (h - 1) + r) * w + i];
          ga[(p * h + r + 1) * w + i] += gv;
          ga[(p * h + r) * w + i] -= gv;
        }
  });
}

#define PM_INSTANTIATE_SAMPLING(T)                                   \
  template Var<T> pad_reflect<T>(const Var<T>&, long);               \
  template Var<T> upsample<T>(const Var<T>&, long);                  \
  template Var<T> bilinear_sample<T>(const Var<T>&, const Var<T>&); \
  template Var<T> forward_diff_x<T>(const Var<T>&);                  \
  template Var<T> forward_diff_y<T>(const Var<T>&);

PM_INSTANTIATE_SAMPLING(float)
PM_INSTANTIATE_SAMPLING(double)
#undef PM_INSTANTIATE_SAMPLING

}  // namespace pm::ad
