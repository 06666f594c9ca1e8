#include "moext/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace moext::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapArr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstMapArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Unfold one C x H x W image into a (C*k*k) x (H*W) patch matrix, zero padded.
template <typename T>
void im2col(const T* img, int channels, int height, int width, int k, int pad, T* col) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          T* out = row + y * width;
          const int sy = y + dy;
          if (sy < 0 || sy >= height || x_lo >= x_hi) {
            std::fill_n(out, width, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * height + sy) * width;
          std::fill_n(out, x_lo, T(0));
          for (int x = x_lo; x < x_hi; ++x) out[x] = src[x + dx];
          std::fill(out + x_hi, out + width, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int pad, T* img) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          T* dst = img + (static_cast<std::size_t>(c) * height + sy) * width;
          const T* in = row + y * width;
          for (int x = x_lo; x < x_hi; ++x) dst[x + dx] += in[x];
        }
      }
    }
  }
}

template <typename T>
void he_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / std::max(1, fan_in));
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      pad_((kernel - 1) / 2),
      weight_(out_channels, in_channels, kernel, kernel),
      bias_(1, out_channels, 1, 1),
      grad_weight_(weight_.shape()),
      grad_bias_(bias_.shape()) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  he_normal(weight_, in_ * k_ * k_, rng);
  bias_.fill(T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  if (x.c() != in_)
    throw ShapeError("conv expects " + std::to_string(in_) + " channels, got " + x.shape().str());
  input_ = x;
  const int h = x.h(), w = x.w(), hw = h * w;
  const int rows = in_ * k_ * k_;
  Tensor<T> y(x.n(), out_, h, w);
  RowMat<T> col(rows, hw);
  ConstMapMat<T> weight(weight_.data(), out_, rows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.data(), out_);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i).data(), in_, h, w, k_, pad_, col.data());
    MapMat<T> out(y.sample(i).data(), out_, hw);
    out.noalias() = weight * col;
    out.colwise() += bias;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  if (grad_out.n() != x.n() || grad_out.c() != out_ || grad_out.h() != x.h() || grad_out.w() != x.w())
    throw ShapeError("conv backward got " + grad_out.shape().str());
  const int h = x.h(), w = x.w(), hw = h * w;
  const int rows = in_ * k_ * k_;
  Tensor<T> grad_in(x.shape());
  RowMat<T> col(rows, hw);
  RowMat<T> grad_col(rows, hw);
  ConstMapMat<T> weight(weight_.data(), out_, rows);
  MapMat<T> grad_weight(grad_weight_.data(), out_, rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> grad_bias(grad_bias_.data(), out_);
  for (int i = 0; i < x.n(); ++i) {
    ConstMapMat<T> go(grad_out.sample(i).data(), out_, hw);
    im2col(x.sample(i).data(), in_, h, w, k_, pad_, col.data());
    grad_weight.noalias() += go * col.transpose();
    grad_bias += go.rowwise().sum();
    grad_col.noalias() = weight.transpose() * go;
    col2im(grad_col.data(), in_, h, w, k_, pad_, grad_in.sample(i).data());
  }
  return grad_in;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, StateRefs<T>& refs) {
  refs.params.push_back({prefix + ".weight", &weight_, &grad_weight_});
  refs.params.push_back({prefix + ".bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(1, channels, 1, 1, T(1)),
      beta_(1, channels, 1, 1),
      grad_gamma_(1, channels, 1, 1),
      grad_beta_(1, channels, 1, 1),
      running_mean_(1, channels, 1, 1),
      running_var_(1, channels, 1, 1, T(1)) {}

template <typename T>
void BatchNorm2d<T>::init(Rng&) {
  gamma_.fill(T(1));
  beta_.fill(T(0));
  running_mean_.fill(T(0));
  running_var_.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != channels_) throw ShapeError("batchnorm channels mismatch on " + x.shape().str());
  const int n = x.n(), c = x.c();
  const auto plane = static_cast<Eigen::Index>(x.shape().plane());
  const double count = static_cast<double>(plane) * n;
  Tensor<T> y(x.shape());
  normalized_ = Tensor<T>(x.shape());
  inv_std_.assign(c, T(0));
  last_mode_ = mode;
  auto chan = [&](const Tensor<T>& t, int i, int ch) {
    return ConstMapArr<T>(t.data() + (static_cast<std::size_t>(i) * c + ch) * plane, plane);
  };
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += static_cast<double>(chan(x, i, ch).sum());
      mean = sum / count;
      double sq = 0.0;
      for (int i = 0; i < n; ++i)
        sq += static_cast<double>((chan(x, i, ch) - static_cast<T>(mean)).square().sum());
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean_.data()[ch] =
          static_cast<T>(momentum_ * running_mean_.data()[ch] + (1.0 - momentum_) * mean);
      running_var_.data()[ch] =
          static_cast<T>(momentum_ * running_var_.data()[ch] + (1.0 - momentum_) * unbiased);
    } else {
      mean = running_mean_.data()[ch];
      var = running_var_.data()[ch];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[ch] = static_cast<T>(inv);
    const T g = gamma_.data()[ch];
    const T b = beta_.data()[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      MapArr<T> xh(normalized_.data() + off, plane);
      MapArr<T> out(y.data() + off, plane);
      xh = (chan(x, i, ch) - static_cast<T>(mean)) * static_cast<T>(inv);
      out = xh * g + b;
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  if (!(grad_out.shape() == normalized_.shape())) throw ShapeError("batchnorm backward shape");
  const int n = grad_out.n(), c = grad_out.c();
  const auto plane = static_cast<Eigen::Index>(grad_out.shape().plane());
  const double count = static_cast<double>(plane) * n;
  Tensor<T> grad_in(grad_out.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      ConstMapArr<T> g(grad_out.data() + off, plane);
      ConstMapArr<T> xh(normalized_.data() + off, plane);
      sum_g += static_cast<double>(g.sum());
      sum_gx += static_cast<double>((g * xh).sum());
    }
    grad_gamma_.data()[ch] += static_cast<T>(sum_gx);
    grad_beta_.data()[ch] += static_cast<T>(sum_g);
    const double scale = static_cast<double>(gamma_.data()[ch]) * inv_std_[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      ConstMapArr<T> g(grad_out.data() + off, plane);
      ConstMapArr<T> xh(normalized_.data() + off, plane);
      MapArr<T> gi(grad_in.data() + off, plane);
      if (last_mode_ == Mode::Train) {
        gi = static_cast<T>(scale) *
             (g - static_cast<T>(sum_g / count) - xh * static_cast<T>(sum_gx / count));
      } else {
        gi = static_cast<T>(scale) * g;
      }
    }
  }
  return grad_in;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, StateRefs<T>& refs) {
  refs.params.push_back({prefix + ".weight", &gamma_, &grad_gamma_});
  refs.params.push_back({prefix + ".bias", &beta_, &grad_beta_});
  refs.buffers.push_back({prefix + ".running_mean", &running_mean_});
  refs.buffers.push_back({prefix + ".running_var", &running_var_});
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  output_ = Tensor<T>(x.shape());
  const auto size = static_cast<Eigen::Index>(x.size());
  MapArr<T>(output_.data(), size) = ConstMapArr<T>(x.data(), size).max(T(0));
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g(grad_out.shape());
  const auto size = static_cast<Eigen::Index>(g.size());
  MapArr<T>(g.data(), size) = (ConstMapArr<T>(output_.data(), size) > T(0))
                                  .select(ConstMapArr<T>(grad_out.data(), size), T(0));
  return g;
}

// ---------------------------------------------------------------- MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  const int oh = x.h() / 2, ow = x.w() / 2;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n(); ++i) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base = (static_cast<std::size_t>(i) * x.c() + c) * x.shape().plane();
      for (int yy = 0; yy < oh; ++yy) {
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * yy) * x.w() + 2 * xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + static_cast<std::size_t>(2 * yy + dy) * x.w() + 2 * xx + dx;
              if (x.data()[idx] > x.data()[best]) best = idx;
            }
          argmax_[o] = best;
          y.data()[o] = x.data()[best];
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g(in_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g.data()[argmax_[o]] += grad_out.data()[o];
  return g;
}

// ---------------------------------------------------------------- AvgPool

template <typename T>
Tensor<T> AvgPool<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  const int oh = (x.h() - k_) / s_ + 1, ow = (x.w() - k_) / s_ + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("avg pool input too small: " + x.shape().str());
  Tensor<T> y(x.n(), x.c(), oh, ow);
  const T scale = T(1) / static_cast<T>(k_ * k_);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          T acc = 0;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx) acc += x.at(i, c, yy * s_ + dy, xx * s_ + dx);
          y.at(i, c, yy, xx) = acc * scale;
        }
  return y;
}

template <typename T>
Tensor<T> AvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g(in_shape_);
  const T scale = T(1) / static_cast<T>(k_ * k_);
  for (int i = 0; i < grad_out.n(); ++i)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int yy = 0; yy < grad_out.h(); ++yy)
        for (int xx = 0; xx < grad_out.w(); ++xx) {
          const T v = grad_out.at(i, c, yy, xx) * scale;
          for (int dy = 0; dy < k_; ++dy)
            for (int dx = 0; dx < k_; ++dx) g.at(i, c, yy * s_ + dy, xx * s_ + dx) += v;
        }
  return g;
}

// ---------------------------------------------------------------- Upsample2

template <typename T>
Tensor<T> Upsample2<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy) {
        const T* src = &x.at(i, c, yy / 2, 0);
        T* dst = &y.at(i, c, yy, 0);
        for (int xx = 0; xx < y.w(); ++xx) dst[xx] = src[xx / 2];
      }
  return y;
}

template <typename T>
Tensor<T> Upsample2<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g(in_shape_);
  for (int i = 0; i < grad_out.n(); ++i)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int yy = 0; yy < grad_out.h(); ++yy) {
        const T* src = &grad_out.at(i, c, yy, 0);
        T* dst = &g.at(i, c, yy / 2, 0);
        for (int xx = 0; xx < grad_out.w(); ++xx) dst[xx / 2] += src[xx];
      }
  return g;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  Tensor<T> y(x.n(), x.c(), 1, 1);
  const std::size_t plane = x.shape().plane();
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = &x.at(i, c, 0, 0);
      T acc = 0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      y.at(i, c, 0, 0) = acc / static_cast<T>(plane);
    }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g(in_shape_);
  const std::size_t plane = in_shape_.plane();
  for (int i = 0; i < in_shape_.n; ++i)
    for (int c = 0; c < in_shape_.c; ++c) {
      const T v = grad_out.at(i, c, 0, 0) / static_cast<T>(plane);
      T* p = &g.at(i, c, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) p[k] = v;
    }
  return g;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(1, 1, out_features, in_features),
      bias_(1, out_features, 1, 1),
      grad_weight_(weight_.shape()),
      grad_bias_(bias_.shape()) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  he_normal(weight_, in_, rng);
  bias_.fill(T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  if (static_cast<int>(x.shape().per_sample()) != in_)
    throw ShapeError("linear expects " + std::to_string(in_) + " inputs, got " + x.shape().str());
  input_ = x;
  Tensor<T> y(x.n(), out_, 1, 1);
  ConstMapMat<T> in(x.data(), x.n(), in_);
  ConstMapMat<T> weight(weight_.data(), out_, in_);
  MapMat<T> out(y.data(), x.n(), out_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(bias_.data(), out_);
  out.noalias() = in * weight.transpose();
  out.rowwise() += bias;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const int n = input_.n();
  ConstMapMat<T> go(grad_out.data(), n, out_);
  ConstMapMat<T> in(input_.data(), n, in_);
  ConstMapMat<T> weight(weight_.data(), out_, in_);
  MapMat<T> grad_weight(grad_weight_.data(), out_, in_);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> grad_bias(grad_bias_.data(), out_);
  grad_weight.noalias() += go.transpose() * in;
  grad_bias += go.colwise().sum();
  Tensor<T> grad_in(input_.shape());
  MapMat<T> gi(grad_in.data(), n, in_);
  gi.noalias() = go * weight;
  return grad_in;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, StateRefs<T>& refs) {
  refs.params.push_back({prefix + ".weight", &weight_, &grad_weight_});
  refs.params.push_back({prefix + ".bias", &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Sequential<T>& Sequential<T>::add(std::string name, std::unique_ptr<Layer<T>> layer) {
  if (auto* seq = dynamic_cast<Sequential<T>*>(layer.get()); seq && seq->label_.empty())
    seq->label_ = name;
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  output_shapes_.clear();
  Tensor<T> cur = x;
  for (auto& [name, layer] : layers_) {
    cur = layer->forward(cur, mode);
    if (!cur.all_finite())
      throw NumericError("non-finite activation after layer '" +
                         (label_.empty() ? name : label_ + "." + name) + "'");
    output_shapes_.push_back(cur.shape());
  }
  return cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, StateRefs<T>& refs) {
  for (auto& [name, layer] : layers_) layer->collect(prefix.empty() ? name : prefix + "." + name, refs);
}

template <typename T>
void Sequential<T>::init(Rng& rng) {
  for (auto& [name, layer] : layers_) layer->init(rng);
}

template <typename T>
std::unique_ptr<Sequential<T>> make_conv_block(int in_channels, int out_channels) {
  auto block = std::make_unique<Sequential<T>>();
  block->template emplace<Conv2d<T>>("conv1", in_channels, out_channels, 3);
  block->template emplace<BatchNorm2d<T>>("bn1", out_channels);
  block->template emplace<ReLU<T>>("relu1");
  block->template emplace<Conv2d<T>>("conv2", out_channels, out_channels, 3);
  block->template emplace<BatchNorm2d<T>>("bn2", out_channels);
  block->template emplace<ReLU<T>>("relu2");
  return block;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const int n = logits.n();
  const int k = static_cast<int>(logits.shape().per_sample());
  Tensor<T> p(logits.shape());
  for (int i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, logits(i, j));
    T sum = 0;
    for (int j = 0; j < k; ++j) {
      p(i, j) = std::exp(logits(i, j) - mx);
      sum += p(i, j);
    }
    for (int j = 0; j < k; ++j) p(i, j) /= sum;
  }
  return p;
}

#define MOEXT_INSTANTIATE(T)                                                   \
  template class Conv2d<T>;                                                    \
  template class BatchNorm2d<T>;                                               \
  template class ReLU<T>;                                                      \
  template class MaxPool2<T>;                                                  \
  template class AvgPool<T>;                                                   \
  template class Upsample2<T>;                                                 \
  template class GlobalAvgPool<T>;                                             \
  template class Linear<T>;                                                    \
  template class Sequential<T>;                                                \
  template std::unique_ptr<Sequential<T>> make_conv_block<T>(int, int);        \
  template Tensor<T> softmax_rows(const Tensor<T>&);

MOEXT_INSTANTIATE(float)
MOEXT_INSTANTIATE(double)
#undef MOEXT_INSTANTIATE

}  // namespace moext::nn
