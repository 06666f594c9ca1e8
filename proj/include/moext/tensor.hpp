#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "moext/errors.hpp"

namespace moext {

// NCHW shape. Feature vectors are carried as n x d x 1 x 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const;
  // "c x h x w", the per-sample form used in architecture traces.
  std::string chw_str() const;
};

// Storage starts on a 64-byte boundary. Vectorised reductions peel their
// first elements according to the address, so a fixed alignment keeps float
// results independent of where the heap happened to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  AlignedVector<T>& vec() { return data_; }
  const AlignedVector<T>& vec() const { return data_; }

  std::span<T> sample(int i) {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const T> sample(int i) const {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }

  T& at(int i, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(i) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& at(int i, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  // Row-major view as n x (c*h*w); convenient for feature batches.
  T& operator()(int i, int j) { return data_[i * shape_.per_sample() + j]; }
  const T& operator()(int i, int j) const { return data_[i * shape_.per_sample() + j]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (s.numel() != data_.size()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    shape_ = s;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!(o.shape_ == shape_)) throw ShapeError("add " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t k = 0; k < data_.size(); ++k) out.data()[k] = static_cast<U>(data_[k]);
    return out;
  }

 private:
  Shape shape_{};
  AlignedVector<T> data_;
};

// Concatenate along the batch dimension.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b);
// Rows [begin, begin + count) of the batch.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int begin, int count);
// Concatenate along channels (same n, h, w).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
// Inverse of concat_channels: split after `first` channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace moext
