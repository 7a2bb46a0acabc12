#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pm {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

/// Dense row-major n-d array. Value semantics; raw data access for kernels.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  bool empty() const { return data_.empty(); }
  long size() const { return static_cast<long>(data_.size()); }
  long rank() const { return static_cast<long>(shape_.size()); }
  long dim(long i) const { return shape_[static_cast<size_t>(i)]; }
  const Shape& shape() const { return shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // Row-major index helpers, mostly for tests and small code paths.
  T& at(long i0, long i1) { return data_[static_cast<size_t>(i0 * dim(1) + i1)]; }
  T& at(long i0, long i1, long i2) {
    return data_[static_cast<size_t>((i0 * dim(1) + i1) * dim(2) + i2)];
  }
  T& at(long i0, long i1, long i2, long i3) {
    return data_[static_cast<size_t>(((i0 * dim(1) + i1) * dim(2) + i2) * dim(3) + i3)];
  }
  T& at(long i0, long i1, long i2, long i3, long i4) {
    return data_[static_cast<size_t>((((i0 * dim(1) + i1) * dim(2) + i2) * dim(3) + i3) * dim(4) +
                                     i4)];
  }
  const T& at(long i0, long i1) const { return const_cast<Tensor*>(this)->at(i0, i1); }
  const T& at(long i0, long i1, long i2) const { return const_cast<Tensor*>(this)->at(i0, i1, i2); }
  const T& at(long i0, long i1, long i2, long i3) const {
    return const_cast<Tensor*>(this)->at(i0, i1, i2, i3);
  }
  const T& at(long i0, long i1, long i2, long i3, long i4) const {
    return const_cast<Tensor*>(this)->at(i0, i1, i2, i3, i4);
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (long i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& other) {
    if (other.size() != size()) throw std::invalid_argument("add_: size mismatch");
    const T* o = other.data();
    T* d = data();
    for (long i = 0; i < size(); ++i) d[i] += o[i];
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using MaskT = Tensor<std::uint8_t>;

}  // namespace pm
