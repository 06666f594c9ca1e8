#include "moext/tensor.hpp"

#include <algorithm>

namespace moext {

std::string Shape::str() const {
  return std::to_string(n) + "x" + chw_str();
}

std::string Shape::chw_str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.c() != b.c() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat_batch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.n() + b.n(), a.c(), a.h(), a.w());
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + a.size());
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.n())
    throw ShapeError("slice_batch out of range on " + x.shape().str());
  Tensor<T> out(count, x.c(), x.h(), x.w());
  const auto per = x.shape().per_sample();
  std::copy_n(x.data() + begin * per, count * per, out.data());
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat_channels " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const auto pa = a.shape().per_sample();
  const auto pb = b.shape().per_sample();
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.data() + i * pa, pa, out.data() + i * (pa + pb));
    std::copy_n(b.data() + i * pb, pb, out.data() + i * (pa + pb) + pa);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first) {
  if (first < 0 || first > x.c()) throw ShapeError("split_channels on " + x.shape().str());
  Tensor<T> a(x.n(), first, x.h(), x.w());
  Tensor<T> b(x.n(), x.c() - first, x.h(), x.w());
  const auto pa = a.shape().per_sample();
  const auto pb = b.shape().per_sample();
  for (int i = 0; i < x.n(); ++i) {
    std::copy_n(x.data() + i * (pa + pb), pa, a.data() + i * pa);
    std::copy_n(x.data() + i * (pa + pb) + pa, pb, b.data() + i * pb);
  }
  return {std::move(a), std::move(b)};
}

#define MOEXT_INSTANTIATE(T)                                                      \
  template Tensor<T> concat_batch(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> slice_batch(const Tensor<T>&, int, int);                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);         \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);

MOEXT_INSTANTIATE(float)
MOEXT_INSTANTIATE(double)
#undef MOEXT_INSTANTIATE

}  // namespace moext
