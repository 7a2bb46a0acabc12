#include <doctest.h>

#include <cmath>

#include "pm/core/ops.hpp"
#include "testutil.hpp"

using namespace pm::ad;
using pm::Shape;
using pm::Tensor;
using pmtest::fd_max_rel_err;
using pmtest::random_tensor;

namespace {

VarD randn_param(const Shape& shape, uint64_t seed, double lo = -1, double hi = 1) {
  return VarD::leaf(random_tensor<double>(shape, seed, lo, hi), true);
}

// Nudges every element away from integer lattice points so finite
// differences never straddle a bilinear kink.
Tensor<double> off_lattice(Tensor<double> t) {
  for (long i = 0; i < t.size(); ++i) {
    const double f = t[i] - std::floor(t[i]);
    t[i] = std::floor(t[i]) + 0.1 + 0.8 * f;
  }
  return t;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("gradients: elementwise chain") {
  auto a = randn_param({3, 4}, 101, 0.3, 1.7);
  auto b = randn_param({3, 4}, 102, 0.3, 1.7);
  auto loss = [&] {
    auto x = mul(add(a, b), sub(a, b));
    x = add(x, div(a, b));
    x = mul(x, sigmoid(b));
    x = add(x, elu(neg(a)));
    x = add(x, gelu(sub(b, a)));
    x = add(x, exp_v(mul_scalar(a, 0.3)));
    x = add(x, log_v(add_scalar(mul(a, a), 1.0)));
    x = add(x, sqrt_v(add_scalar(square(b), 0.5)));
    x = add(x, sin_v(a));
    x = add(x, cos_v(b));
    x = add(x, reciprocal(add_scalar(square(a), 1.0)));
    return mean_all(x);
  };
  CHECK(fd_max_rel_err(loss, {a, b}) < kTol);
}

TEST_CASE("gradients: abs, clamp, minimum away from kinks") {
  Tensor<double> av = random_tensor<double>({20}, 111, 0.2, 1.0);
  Tensor<double> bv = random_tensor<double>({20}, 112, -1.0, -0.2);
  auto a = VarD::leaf(std::move(av), true);
  auto b = VarD::leaf(std::move(bv), true);
  auto loss = [&] {
    auto x = add(abs_v(b), minimum(a, neg(b)));
    x = add(x, clamp_min(a, 0.5));
    return sum_all(x);
  };
  CHECK(fd_max_rel_err(loss, {a, b}) < kTol);
}

TEST_CASE("gradients: scalar broadcast binary ops") {
  auto a = randn_param({2, 5}, 121, 0.5, 1.5);
  auto s = randn_param({1}, 122, 0.5, 1.5);
  auto loss = [&] {
    auto x = add(mul(a, s), div(a, s));
    x = sub(x, s);
    return mean_all(x);
  };
  CHECK(fd_max_rel_err(loss, {a, s}) < kTol);
}

TEST_CASE("gradients: mul_mid broadcast over prompt axis") {
  auto a = randn_param({2, 3, 4, 2, 2}, 131);
  auto g = randn_param({2, 3, 2, 2}, 132);
  auto loss = [&] { return mean_all(square(mul_mid(a, g, 2))); };
  CHECK(fd_max_rel_err(loss, {a, g}) < kTol);
}

TEST_CASE("gradients: reductions") {
  auto a = randn_param({2, 3, 4, 5}, 141);
  auto loss = [&] {
    auto cm = channel_mean(a);
    return add(mean_all(square(cm)), mul_scalar(sum_all(cm), 0.01));
  };
  CHECK(fd_max_rel_err(loss, {a}) < kTol);
}

TEST_CASE("gradients: reshape, permute, slice, concat, repeat") {
  auto a = randn_param({2, 3, 4}, 151);
  auto b = randn_param({2, 2, 4}, 152);
  auto loss = [&] {
    auto p = permute(a, {1, 0, 2});               // (3,2,4)
    auto r = reshape(p, {3, 8});                  // (3,8)
    auto s = slice(r, 1, 2, 4);                   // (3,4)
    auto c = concat<double>({a, b}, 1);           // (2,5,4)
    auto t = repeat_leading(s, 2);                // (2,3,4)
    return add(mean_all(square(c)), mean_all(mul(t, t)));
  };
  CHECK(fd_max_rel_err(loss, {a, b}) < kTol);
}

TEST_CASE("gradients: conv2d stride 1 and 2") {
  for (long stride : {1L, 2L}) {
    auto x = randn_param({2, 3, 6, 7}, 160 + stride);
    auto w = randn_param({4, 3, 3, 3}, 162 + stride);
    auto b = randn_param({4}, 164 + stride);
    auto loss = [&] { return mean_all(square(conv2d(x, w, b, stride, 1))); };
    CHECK(fd_max_rel_err(loss, {x, w, b}) < kTol);
  }
}

TEST_CASE("gradients: depthwise conv") {
  auto x = randn_param({2, 4, 5, 6}, 171);
  auto w = randn_param({4, 3, 3}, 172);
  auto b = randn_param({4}, 173);
  auto loss = [&] { return mean_all(square(dwconv2d(x, w, b, 1))); };
  CHECK(fd_max_rel_err(loss, {x, w, b}) < kTol);
}

TEST_CASE("gradients: reflect pad and upsample") {
  auto x = randn_param({2, 2, 4, 5}, 181);
  auto loss = [&] {
    auto p = pad_reflect(x, 1);
    auto u = upsample(x, 2);
    return add(mean_all(square(p)), mean_all(square(u)));
  };
  CHECK(fd_max_rel_err(loss, {x}) < kTol);
}

TEST_CASE("gradients: bilinear sampling wrt source and grid") {
  auto src = randn_param({2, 3, 6, 7}, 191);
  auto grid = VarD::leaf(off_lattice(random_tensor<double>({2, 2, 4, 5}, 192, 0.4, 4.4)), true);
  auto loss = [&] { return mean_all(square(bilinear_sample(src, grid))); };
  CHECK(fd_max_rel_err(loss, {src, grid}) < kTol);
}

TEST_CASE("gradients: forward differences") {
  auto x = randn_param({2, 2, 4, 5}, 201);
  auto loss = [&] {
    return add(mean_all(abs_v(forward_diff_x(x))), mean_all(square(forward_diff_y(x))));
  };
  // abs kinks are measure-zero for random data; keep h small
  CHECK(fd_max_rel_err(loss, {x}, 1e-6) < 1e-4);
}

TEST_CASE("gradients: mid-axis norm (layer and instance flavors)") {
  auto x = randn_param({2, 3, 4, 5}, 211);
  auto gm = randn_param({3}, 212, 0.5, 1.5);
  auto bt = randn_param({3}, 213);
  auto loss_ln = [&] {
    auto n = norm_mid(x, 2, 3, 20, 1e-5);  // over channels
    return mean_all(square(channel_affine(n, gm, bt)));
  };
  CHECK(fd_max_rel_err(loss_ln, {x, gm, bt}) < kTol);
  auto loss_in = [&] {
    auto n = norm_mid(x, 6, 20, 1, 1e-5);  // over spatial extent
    return mean_all(mul(n, sigmoid(n)));
  };
  CHECK(fd_max_rel_err(loss_in, {x}) < kTol);
}

TEST_CASE("gradients: attention pipeline") {
  const long heads = 2;
  auto q = randn_param({2, 4, 2, 3}, 221);
  auto k = randn_param({2, 4, 5, 2, 3}, 222);
  auto v = randn_param({2, 4, 5, 2, 3}, 223);
  auto log_tau = randn_param({heads}, 224, -0.3, 0.3);
  auto loss = [&] {
    auto inv_tau = exp_v(neg(log_tau));
    auto sc = qk_scores(q, k, inv_tau, heads);
    auto wt = softmax_lastdim(sc);
    auto out = attn_mix(wt, v, heads);
    return mean_all(square(out));
  };
  CHECK(fd_max_rel_err(loss, {q, k, v, log_tau}) < kTol);
}

TEST_CASE("gradients: batched matmul") {
  auto a = randn_param({3, 3, 3}, 231);
  auto b = randn_param({3, 3, 7}, 232);
  auto loss = [&] { return mean_all(square(bmm(a, b))); };
  CHECK(fd_max_rel_err(loss, {a, b}) < kTol);
}

TEST_CASE("tape semantics: shared subgraph, accumulation, detach, no-grad") {
  auto a = VarD::leaf(Tensor<double>({2}, {1.5, -0.5}), true);

  SUBCASE("value reused by two consumers gets summed gradients") {
    auto sq = square(a);
    auto l = add(sum_all(sq), sum_all(mul_scalar(sq, 2.0)));
    l.backward();
    CHECK(a.grad()[0] == doctest::Approx(3 * 2 * 1.5));
    CHECK(a.grad()[1] == doctest::Approx(3 * 2 * -0.5));
  }

  SUBCASE("backward twice accumulates into leaf grads") {
    sum_all(square(a)).backward();
    sum_all(square(a)).backward();
    CHECK(a.grad()[0] == doctest::Approx(2 * 2 * 1.5));
  }

  SUBCASE("detach blocks gradient flow") {
    auto d = square(a).detach();
    CHECK(!d.requires_grad());
    auto l = sum_all(mul(square(a), d));
    l.backward();
    // d treated as constant {2.25, 0.25}
    CHECK(a.grad()[0] == doctest::Approx(2 * 1.5 * 2.25));
  }

  SUBCASE("NoGradGuard records nothing") {
    NoGradGuard ng;
    auto y = square(a);
    CHECK(!y.requires_grad());
    CHECK(y.node()->parents.empty());
  }

  SUBCASE("zero_grad clears") {
    sum_all(a).backward();
    CHECK(a.has_grad());
    a.zero_grad();
    CHECK(!a.has_grad());
  }
}
