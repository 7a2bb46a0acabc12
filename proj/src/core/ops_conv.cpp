#include <stdexcept>

#include "pm/core/kernels.hpp"
#include "pm/core/ops.hpp"

namespace pm::ad {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride, long pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: want NCHW input and OIHW weight");
  if (ws[1] != xs[1])
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xs) + " vs " +
                                shape_str(ws));
  if (b.size() != ws[0]) throw std::invalid_argument("conv2d: bias size mismatch");
  Conv2dDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad};
  Tensor<T> y({d.batch, d.c_out, d.h_out(), d.w_out()});
  kernels::conv2d_fwd(x.value().data(), w.value().data(), b.value().data(), y.data(), d);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {x, w, b},
                    [xn, wn, bn, d](const Tensor<T>&, const Tensor<T>& g) {
                      if (xn->requires_grad)
                        kernels::conv2d_bwd_input(wn->value.data(), g.data(), xn->grad_ptr(), d);
                      if (wn->requires_grad)
                        kernels::conv2d_bwd_weight(xn->value.data(), g.data(), wn->grad_ptr(), d);
                      if (bn->requires_grad) kernels::conv2d_bwd_bias(g.data(), bn->grad_ptr(), d);
                    });
}

template <typename T>
Var<T> dwconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 3)
    throw std::invalid_argument("dwconv2d: want NCHW input and (C,kh,kw) weight");
  if (ws[0] != xs[1])
    throw std::invalid_argument("dwconv2d: channel mismatch " + shape_str(xs) + " vs " +
                                shape_str(ws));
  if (b.size() != ws[0]) throw std::invalid_argument("dwconv2d: bias size mismatch");
  DwConv2dDims d{xs[0], xs[1], xs[2], xs[3], ws[1], ws[2], pad};
  Tensor<T> y({d.batch, d.channels, d.h_out(), d.w_out()});
  kernels::dwconv2d_fwd(x.value().data(), w.value().data(), b.value().data(), y.data(), d);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {x, w, b},
                    [xn, wn, bn, d](const Tensor<T>&, const Tensor<T>& g) {
                      if (xn->requires_grad)
                        kernels::dwconv2d_bwd_input(wn->value.data(), g.data(), xn->grad_ptr(),
                                                    d);
                      if (wn->requires_grad)
                        kernels::dwconv2d_bwd_weight(xn->value.data(), g.data(), wn->grad_ptr(),
                                                     d);
                      if (bn->requires_grad)
                        kernels::dwconv2d_bwd_bias(g.data(), bn->grad_ptr(), d);
                    });
}

#define PM_INSTANTIATE_CONV(T)                                                         \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, long, long); \
  template Var<T> dwconv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, long);

PM_INSTANTIATE_CONV(float)
PM_INSTANTIATE_CONV(double)
#undef PM_INSTANTIATE_CONV

}  // namespace pm::ad
