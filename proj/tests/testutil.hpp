#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pm/core/autodiff.hpp"
#include "pm/core/rng.hpp"
#include "pm/core/tensor.hpp"

namespace pmtest {

inline double rel_err(double a, double b) {
  const double denom = std::abs(a) + std::abs(b);
  if (denom < 1e-12) return 0.0;
  return std::abs(a - b) / denom;
}

template <typename T>
double max_abs_diff(const pm::Tensor<T>& a, const pm::Tensor<T>& b) {
  double worst = 0;
  for (long i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

template <typename T>
double max_rel_diff(const pm::Tensor<T>& a, const pm::Tensor<T>& b) {
  double worst = 0;
  for (long i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

// Finite-difference check of d(loss)/d(params) against the tape gradients,
// using a fourth-order central stencil. loss must be a pure function of the
// current param values. The denominator is floored: coordinates whose true
// gradient sits below the floor cannot be resolved to any relative accuracy
// by double-precision differencing, but an absolute disagreement above the
// floor still registers at full strength.
inline double fd_max_rel_err(const std::function<pm::ad::VarD()>& loss,
                             std::vector<pm::ad::VarD> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<pm::Tensor<double>> grads;
  for (auto& p : params) {
    grads.push_back(p.has_grad() ? p.grad() : pm::Tensor<double>::zeros(p.shape()));
    p.zero_grad();
  }
  double worst = 0;
  for (size_t k = 0; k < params.size(); ++k) {
    double* v = params[k].value().data();
    for (long i = 0; i < params[k].size(); ++i) {
      const double save = v[i];
      const double at[4] = {save + h, save - h, save + 2 * h, save - 2 * h};
      double f[4];
      for (int s = 0; s < 4; ++s) {
        v[i] = at[s];
        f[s] = loss().item();
      }
      v[i] = save;
      const double fd = (-f[2] + 8 * f[0] - 8 * f[1] + f[3]) / (12 * h);
      const double denom = std::max(std::abs(grads[k][i]) + std::abs(fd), 1e-5);
      worst = std::max(worst, std::abs(grads[k][i] - fd) / denom);
    }
  }
  return worst;
}

template <typename T>
pm::Tensor<T> random_tensor(const pm::Shape& shape, uint64_t seed, T lo = T(-1), T hi = T(1)) {
  pm::Rng rng(seed);
  return rng.uniform_tensor<T>(shape, lo, hi);
}

}  // namespace pmtest
