#include <numeric>
#include <stdexcept>

#include "pm/core/ops.hpp"

namespace pm::ad {

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  T s = 0;
  for (long i = 0; i < x.size(); ++i) s += x.data()[i];
  auto an = a.node();
  return make_op<T>(Tensor<T>({1}, s), {a}, [an](const Tensor<T>&, const Tensor<T>& g) {
    T* ga = an->grad_ptr();
    const T gv = g.data()[0];
    for (long i = 0; i < an->value.size(); ++i) ga[i] += gv;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  T s = 0;
  for (long i = 0; i < x.size(); ++i) s += x.data()[i];
  const T inv = T(1) / static_cast<T>(x.size());
  auto an = a.node();
  return make_op<T>(Tensor<T>({1}, s * inv), {a},
                    [an, inv](const Tensor<T>&, const Tensor<T>& g) {
                      T* ga = an->grad_ptr();
                      const T gv = g.data()[0] * inv;
                      for (long i = 0; i < an->value.size(); ++i) ga[i] += gv;
                    });
}

template <typename T>
Var<T> channel_mean(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_mean expects NCHW");
  const long n = s[0], c = s[1], hw = s[2] * s[3];
  const Tensor<T>& x = a.value();
  Tensor<T> y({n, 1, s[2], s[3]});
  const T inv = T(1) / static_cast<T>(c);
  for (long b = 0; b < n; ++b)
    for (long p = 0; p < hw; ++p) {
      T acc = 0;
      for (long ci = 0; ci < c; ++ci) acc += x.data()[(b * c + ci) * hw + p];
      y.data()[b * hw + p] = acc * inv;
    }
  auto an = a.node();
  return make_op<T>(std::move(y), {a},
                    [an, n, c, hw, inv](const Tensor<T>&, const Tensor<T>& g) {
                      T* ga = an->grad_ptr();
                      for (long b = 0; b < n; ++b)
                        for (long ci = 0; ci < c; ++ci)
                          for (long p = 0; p < hw; ++p)
                            ga[(b * c + ci) * hw + p] += g.data()[b * hw + p] * inv;
                    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  const Tensor<T>& x = a.value();
  Tensor<T> y(shape, std::vector<T>(x.data(), x.data() + x.size()));
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an](const Tensor<T>&, const Tensor<T>& g) {
    an->accum(g.data(), g.size());
  });
}

namespace {

// Gather map for a permutation: out[i] = in[src_index(i)].
std::vector<long> permute_map(const Shape& in_shape, const std::vector<long>& perm,
                              Shape& out_shape) {
  const long r = static_cast<long>(in_shape.size());
  std::vector<long> in_strides(r, 1);
  for (long d = r - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
  out_shape.resize(r);
  for (long d = 0; d < r; ++d) out_shape[d] = in_shape[perm[d]];
  const long n = shape_numel(in_shape);
  std::vector<long> map(n);
  std::vector<long> coord(r, 0);
  for (long i = 0; i < n; ++i) {
    long src = 0;
    for (long d = 0; d < r; ++d) src += coord[d] * in_strides[perm[d]];
    map[i] = src;
    for (long d = r - 1; d >= 0; --d) {
      if (++coord[d] < out_shape[d]) break;
      coord[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<long> perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw std::invalid_argument("permute: rank mismatch");
  Shape out_shape;
  auto map = permute_map(s, perm, out_shape);
  const Tensor<T>& x = a.value();
  Tensor<T> y(out_shape);
  for (long i = 0; i < y.size(); ++i) y.data()[i] = x.data()[map[i]];
  auto an = a.node();
  return make_op<T>(std::move(y), {a},
                    [an, map = std::move(map)](const Tensor<T>&, const Tensor<T>& g) {
                      T* ga = an->grad_ptr();
                      for (long i = 0; i < g.size(); ++i) ga[map[i]] += g.data()[i];
                    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, long dim) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  const long r = static_cast<long>(s0.size());
  if (dim < 0 || dim >= r) throw std::invalid_argument("concat: bad dim");
  long total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (static_cast<long>(s.size()) != r) throw std::invalid_argument("concat: rank mismatch");
    for (long d = 0; d < r; ++d)
      if (d != dim && s[d] != s0[d])
        throw std::invalid_argument("concat: shape mismatch at dim " + std::to_string(d));
    total += s[dim];
  }
  Shape out_shape = s0;
  out_shape[dim] = total;
  long outer = 1, inner = 1;
  for (long d = 0; d < dim; ++d) outer *= s0[d];
  for (long d = dim + 1; d < r; ++d) inner *= s0[d];

  Tensor<T> y(out_shape);
  const long row = total * inner;
  long off = 0;
  std::vector<long> blocks(xs.size());
  for (size_t k = 0; k < xs.size(); ++k) {
    const long blk = xs[k].shape()[dim] * inner;
    blocks[k] = blk;
    const T* src = xs[k].value().data();
    for (long o = 0; o < outer; ++o)
      std::copy(src + o * blk, src + (o + 1) * blk, y.data() + o * row + off);
    off += blk;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return make_op<T>(std::move(y), xs,
                    [nodes, blocks, outer, row](const Tensor<T>&, const Tensor<T>& g) {
                      long off = 0;
                      for (size_t k = 0; k < nodes.size(); ++k) {
                        const long blk = blocks[k];
                        if (nodes[k]->requires_grad) {
                          T* ga = nodes[k]->grad_ptr();
                          for (long o = 0; o < outer; ++o) {
                            const T* gs = g.data() + o * row + off;
                            T* gd = ga + o * blk;
                            for (long i = 0; i < blk; ++i) gd[i] += gs[i];
                          }
                        }
                        off += blk;
                      }
                    });
}

template <typename T>
Var<T> slice(const Var<T>& a, long dim, long start, long len) {
  const Shape& s = a.shape();
  const long r = static_cast<long>(s.size());
  if (dim < 0 || dim >= r || start < 0 || len <= 0 || start + len > s[dim])
    throw std::invalid_argument("slice: bad range");
  long outer = 1, inner = 1;
  for (long d = 0; d < dim; ++d) outer *= s[d];
  for (long d = dim + 1; d < r; ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[dim] = len;
  Tensor<T> y(out_shape);
  const long in_row = s[dim] * inner, out_row = len * inner, off = start * inner;
  const T* src = a.value().data();
  for (long o = 0; o < outer; ++o)
    std::copy(src + o * in_row + off, src + o * in_row + off + out_row, y.data() + o * out_row);
  auto an = a.node();
  return make_op<T>(std::move(y), {a},
                    [an, outer, in_row, out_row, off](const Tensor<T>&, const Tensor<T>& g) {
                      T* ga = an->grad_ptr();
                      for (long o = 0; o < outer; ++o) {
                        const T* gs = g.data() + o * out_row;
                        T* gd = ga + o * in_row + off;
                        for (long i = 0; i < out_row; ++i) gd[i] += gs[i];
                      }
                    });
}

template <typename T>
Var<T> repeat_leading(const Var<T>& a, long n) {
  const Shape& s = a.shape();
  Shape out_shape;
  out_shape.push_back(n);
  for (long d : s) out_shape.push_back(d);
  const long blk = a.size();
  Tensor<T> y(out_shape);
  for (long k = 0; k < n; ++k)
    std::copy(a.value().data(), a.value().data() + blk, y.data() + k * blk);
  auto an = a.node();
  return make_op<T>(std::move(y), {a}, [an, n, blk](const Tensor<T>&, const Tensor<T>& g) {
    T* ga = an->grad_ptr();
    for (long k = 0; k < n; ++k) {
      const T* gs = g.data() + k * blk;
      for (long i = 0; i < blk; ++i) ga[i] += gs[i];
    }
  });
}

#define PM_INSTANTIATE_SHAPE(T)                                            \
  template Var<T> sum_all<T>(const Var<T>&);                               \
  template Var<T> mean_all<T>(const Var<T>&);                              \
  template Var<T> channel_mean<T>(const Var<T>&);                          \
  template Var<T> reshape<T>(const Var<T>&, Shape);                        \
  template Var<T> permute<T>(const Var<T>&, std::vector<long>);            \
  template Var<T> concat<T>(const std::vector<Var<T>>&, long);             \
  template Var<T> slice<T>(const Var<T>&, long, long, long);               \
  template Var<T> repeat_leading<T>(const Var<T>&, long);

PM_INSTANTIATE_SHAPE(float)
PM_INSTANTIATE_SHAPE(double)
#undef PM_INSTANTIATE_SHAPE

}  // namespace pm::ad
