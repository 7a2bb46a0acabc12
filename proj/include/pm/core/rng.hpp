#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "pm/core/tensor.hpp"

namespace pm {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Deterministic per-purpose stream: mixing a name into the seed keeps one
/// module's draws independent of how many draws other modules made.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return (seed * 0x9E3779B97F4A7C15ull) ^ fnv1a64(name);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t seed, std::string_view name) : eng_(derive_seed(seed, name)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  long integer(long lo, long hi) {  // inclusive bounds
    return std::uniform_int_distribution<long>(lo, hi)(eng_);
  }

  template <typename T>
  Tensor<T> normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(normal(mean, stddev));
    return t;
  }
  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    return t;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace pm
