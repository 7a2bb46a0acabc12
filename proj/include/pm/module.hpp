#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pm/core/autodiff.hpp"
#include "pm/core/rng.hpp"
#include "pm/core/tensor.hpp"

namespace pm {

// Ordered named parameter registry. Iteration order is registration order, so
// checkpoints and optimizer state stay deterministic across runs.
template <typename T>
class ParamSet {
 public:
  ad::Var<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, ad::Var<T>::leaf(std::move(init), true));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ad::Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return items_[it->second].second;
  }
  const ad::Var<T>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::vector<std::pair<std::string, ad::Var<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, ad::Var<T>>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  long total_scalars() const {
    long n = 0;
    for (const auto& [name, v] : items_) n += v.size();
    return n;
  }

  // summed parameter sizes grouped by name prefix (up to the first '.' past
  // the given root), for architecture audits
  std::vector<std::pair<std::string, long>> count_by_block(const std::string& root = "") const {
    std::vector<std::pair<std::string, long>> out;
    std::map<std::string, long> acc;
    for (const auto& [name, v] : items_) {
      if (name.rfind(root, 0) != 0) continue;
      std::string rest = name.substr(root.size());
      auto dot = rest.find('.');
      acc[dot == std::string::npos ? rest : rest.substr(0, dot)] += v.size();
    }
    out.assign(acc.begin(), acc.end());
    return out;
  }

  void zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, ad::Var<T>>> items_;
  std::map<std::string, size_t> index_;
};

namespace init {

// Stable per-parameter stream: the draw depends on the parameter name and the
// run seed, not on registration order.
inline uint64_t name_seed(const std::string& name, uint64_t seed) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h ^ (seed * 0x9e3779b97f4a7c15ull);
}

template <typename T>
Tensor<T> normal(const Shape& shape, double stddev, uint64_t seed) {
  return Rng(seed).normal_tensor<T>(shape, 0.0, stddev);
}

// He-style fan-in scaling for conv weights laid out (out, in, kh, kw) or
// (c, 1, kh, kw) for the depthwise case.
template <typename T>
Tensor<T> conv_weight(const Shape& shape, uint64_t seed) {
  long fan_in = 1;
  for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
  return normal<T>(shape, std::sqrt(2.0 / static_cast<double>(fan_in)), seed);
}

}  // namespace init
}  // namespace pm
