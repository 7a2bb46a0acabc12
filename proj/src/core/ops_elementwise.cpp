#include <cmath>
#include <stdexcept>

#include "pm/core/ops.hpp"

namespace pm::ad {

namespace {

template <typename T, typename FwdF, typename DerivF>
Var<T> unary(const Var<T>& a, FwdF f, DerivF df) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  const long n = x.size();
  for (long i = 0; i < n; ++i) y.data()[i] = f(x.data()[i]);
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, df](const Tensor<T>& yv, const Tensor<T>& g) {
    T* gp = an->grad_ptr();
    const T* xp = an->value.data();
    const T* yp = yv.data();
    const T* gg = g.data();
    const long n = g.size();
    for (long i = 0; i < n; ++i) gp[i] += gg[i] * df(xp[i], yp[i]);
  });
}

template <typename T>
void check_binary_shapes(const Var<T>& a, const Var<T>& b) {
  if (b.size() != 1 && a.shape() != b.shape())
    throw std::invalid_argument("binary op shapes differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_binary_shapes(a, b);
  const bool bs = b.size() == 1;
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(xa.shape());
  const long n = xa.size();
  for (long i = 0; i < n; ++i) y.data()[i] = xa.data()[i] + xb.data()[bs ? 0 : i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b}, [an, bn, bs](const Tensor<T>&, const Tensor<T>& g) {
    const long n = g.size();
    if (an->requires_grad) an->accum(g.data(), n);
    if (bn->requires_grad) {
      if (bs) {
        T s = 0;
        for (long i = 0; i < n; ++i) s += g.data()[i];
        bn->grad_ptr()[0] += s;
      } else {
        bn->accum(g.data(), n);
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_binary_shapes(a, b);
  const bool bs = b.size() == 1;
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(xa.shape());
  const long n = xa.size();
  for (long i = 0; i < n; ++i) y.data()[i] = xa.data()[i] - xb.data()[bs ? 0 : i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b}, [an, bn, bs](const Tensor<T>&, const Tensor<T>& g) {
    const long n = g.size();
    if (an->requires_grad) an->accum(g.data(), n);
    if (bn->requires_grad) {
      T* gb = bn->grad_ptr();
      if (bs) {
        T s = 0;
        for (long i = 0; i < n; ++i) s += g.data()[i];
        gb[0] -= s;
      } else {
        for (long i = 0; i < n; ++i) gb[i] -= g.data()[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_binary_shapes(a, b);
  const bool bs = b.size() == 1;
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(xa.shape());
  const long n = xa.size();
  for (long i = 0; i < n; ++i) y.data()[i] = xa.data()[i] * xb.data()[bs ? 0 : i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b}, [an, bn, bs](const Tensor<T>&, const Tensor<T>& g) {
    const long n = g.size();
    const T* xa = an->value.data();
    const T* xb = bn->value.data();
    if (an->requires_grad) {
      T* ga = an->grad_ptr();
      for (long i = 0; i < n; ++i) ga[i] += g.data()[i] * xb[bs ? 0 : i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad_ptr();
      if (bs) {
        T s = 0;
        for (long i = 0; i < n; ++i) s += g.data()[i] * xa[i];
        gb[0] += s;
      } else {
        for (long i = 0; i < n; ++i) gb[i] += g.data()[i] * xa[i];
      }
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_binary_shapes(a, b);
  const bool bs = b.size() == 1;
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(xa.shape());
  const long n = xa.size();
  for (long i = 0; i < n; ++i) y.data()[i] = xa.data()[i] / xb.data()[bs ? 0 : i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b}, [an, bn, bs](const Tensor<T>& yv, const Tensor<T>& g) {
    const long n = g.size();
    const T* xb = bn->value.data();
    const T* yp = yv.data();
    if (an->requires_grad) {
      T* ga = an->grad_ptr();
      for (long i = 0; i < n; ++i) ga[i] += g.data()[i] / xb[bs ? 0 : i];
    }
    if (bn->requires_grad) {
      T* gb = bn->grad_ptr();
      if (bs) {
        T s = 0;
        for (long i = 0; i < n; ++i) s += g.data()[i] * yp[i];
        gb[0] -= s / xb[0];
      } else {
        for (long i = 0; i < n; ++i) gb[i] -= g.data()[i] * yp[i] / xb[i];
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return unary(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  return unary(a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return 2 * x; });
}

template <typename T>
Var<T> sqrt_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> exp_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> abs_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::abs(x); },
               [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sin_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Var<T> cos_v(const Var<T>& a) {
  return unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> elu(const Var<T>& a) {
  return unary(a, [](T x) { return x > 0 ? x : std::expm1(x); },
               [](T x, T y) { return x > 0 ? T(1) : y + T(1); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T kInvSqrt2 = T(0.7071067811865476);
  constexpr T kInvSqrt2Pi = T(0.3989422804014327);
  return unary(a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * kInvSqrt2)); },
               [](T x, T) {
                 const T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
                 return cdf + x * kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
               });
}

template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  return unary(a, [lo](T x) { return x < lo ? lo : x; },
               [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("minimum: shapes differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(xa.shape());
  const long n = xa.size();
  for (long i = 0; i < n; ++i) y.data()[i] = std::min(xa.data()[i], xb.data()[i]);
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b}, [an, bn](const Tensor<T>&, const Tensor<T>& g) {
    const long n = g.size();
    const T* xa = an->value.data();
    const T* xb = bn->value.data();
    T* ga = an->requires_grad ? an->grad_ptr() : nullptr;
    T* gb = bn->requires_grad ? bn->grad_ptr() : nullptr;
    for (long i = 0; i < n; ++i) {
      if (xa[i] <= xb[i]) {
        if (ga) ga[i] += g.data()[i];
      } else if (gb) {
        gb[i] += g.data()[i];
      }
    }
  });
}

template <typename T>
Var<T> mul_mid(const Var<T>& a, const Var<T>& b, long mid_dim) {
  const Shape& sa = a.shape();
  Shape expect;
  for (long d = 0; d < static_cast<long>(sa.size()); ++d)
    if (d != mid_dim) expect.push_back(sa[d]);
  if (b.shape() != expect)
    throw std::invalid_argument("mul_mid: b must match a without dim " +
                                std::to_string(mid_dim));
  long outer = 1, inner = 1;
  for (long d = 0; d < mid_dim; ++d) outer *= sa[d];
  for (long d = mid_dim + 1; d < static_cast<long>(sa.size()); ++d) inner *= sa[d];
  const long mid = sa[mid_dim];
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  Tensor<T> y(sa);
  for (long o = 0; o < outer; ++o)
    for (long m = 0; m < mid; ++m)
      for (long i = 0; i < inner; ++i)
        y.data()[(o * mid + m) * inner + i] =
            xa.data()[(o * mid + m) * inner + i] * xb.data()[o * inner + i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(std::move(y), {a, b},
                    [an, bn, outer, mid, inner](const Tensor<T>&, const Tensor<T>& g) {
                      const T* xa = an->value.data();
                      const T* xb = bn->value.data();
                      if (an->requires_grad) {
                        T* ga = an->grad_ptr();
                        for (long o = 0; o < outer; ++o)
                          for (long m = 0; m < mid; ++m)
                            for (long i = 0; i < inner; ++i)
                              ga[(o * mid + m) * inner + i] +=
                                  g.data()[(o * mid + m) * inner + i] * xb[o * inner + i];
                      }
                      if (bn->requires_grad) {
                        T* gb = bn->grad_ptr();
                        for (long o = 0; o < outer; ++o)
                          for (long i = 0; i < inner; ++i) {
                            T s = 0;
                            for (long m = 0; m < mid; ++m)
                              s += g.data()[(o * mid + m) * inner + i] *
                                   xa[(o * mid + m) * inner + i];
                            gb[o * inner + i] += s;
                          }
                      }
                    });
}

#define PM_INSTANTIATE_ELEMENTWISE(T)                                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> add_scalar<T>(const Var<T>&, T);                    \
  template Var<T> mul_scalar<T>(const Var<T>&, T);                    \
  template Var<T> neg<T>(const Var<T>&);                              \
  template Var<T> reciprocal<T>(const Var<T>&);                       \
  template Var<T> square<T>(const Var<T>&);                           \
  template Var<T> sqrt_v<T>(const Var<T>&);                           \
  template Var<T> exp_v<T>(const Var<T>&);                            \
  template Var<T> log_v<T>(const Var<T>&);                            \
  template Var<T> abs_v<T>(const Var<T>&);                            \
  template Var<T> sin_v<T>(const Var<T>&);                            \
  template Var<T> cos_v<T>(const Var<T>&);                            \
  template Var<T> sigmoid<T>(const Var<T>&);                          \
  template Var<T> elu<T>(const Var<T>&);                              \
  template Var<T> gelu<T>(const Var<T>&);                             \
  template Var<T> clamp_min<T>(const Var<T>&, T);                     \
  template Var<T> minimum<T>(const Var<T>&, const Var<T>&);           \
  template Var<T> mul_mid<T>(const Var<T>&, const Var<T>&, long);

PM_INSTANTIATE_ELEMENTWISE(float)
PM_INSTANTIATE_ELEMENTWISE(double)
#undef PM_INSTANTIATE_ELEMENTWISE

}  // namespace pm::ad
