#include "fundus/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "fundus/errors.hpp"

namespace fundus::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Unfolds 3x3 patches of one sample into a (channels*9) x (oh*ow) matrix.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int stride, int pad, int oh, int ow, T* cols) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < channels; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * p;
        for (int oy = 0; oy < oh; ++oy) {
          T* row = dst + static_cast<std::size_t>(oy) * ow;
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(ow, w + pad - kx);
            std::fill(row, row + lo, T(0));
            if (hi > lo) std::memcpy(row + lo, src + lo - pad + kx, sizeof(T) * (hi - lo));
            std::fill(row + std::max(hi, lo), row + ow, T(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int stride, int pad, int oh, int ow, T* dx) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < channels; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * p;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* row = src + static_cast<std::size_t>(oy) * ow;
          if (stride == 1) {
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(ow, w + pad - kx);
            T* d = dst - pad + kx;
            for (int ox = lo; ox < hi; ++ox) d[ox] += row[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[ix] += row[ox];
            }
          }
        }
      }
  }
}

}  // namespace

// --- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int stride, int pad)
    : weight(name + ".weight", out_channels, in_channels, 3, 3),
      bias(name + ".bias", out_channels, 1, 1, 1),
      in_(in_channels),
      out_(out_channels),
      stride_(stride),
      pad_(pad) {}

template <typename T>
void Conv2d<T>::init(Rng& rng, double gain) {
  std::normal_distribution<double> normal(0.0, std::sqrt(gain / (in_ * 9.0)));
  for (auto& v : weight.value.data) v = static_cast<T>(normal(rng));
  bias.value.zero();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.c != in_) throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels");
  const int oh = output_side(x.h), ow = output_side(x.w);
  if (oh <= 0 || ow <= 0) throw ShapeError(weight.name + ": input too small");
  input_ = x;
  Tensor<T> y(x.n, out_, oh, ow);
  const int k = in_ * 9;
  const int p = oh * ow;
  std::vector<T> cols(static_cast<std::size_t>(k) * p);
  ConstMatMap<T> wmat(weight.value.data.data(), out_, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.value.data.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_, x.h, x.w, stride_, pad_, oh, ow, cols.data());
    MatMap<T> ymat(y.sample(i), out_, p);
    ymat.noalias() = wmat * ConstMatMap<T>(cols.data(), k, p);
    ymat.colwise() += b;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  const Tensor<T>& x = input_;
  const int oh = dy.h, ow = dy.w;
  const int k = in_ * 9;
  const int p = oh * ow;
  std::vector<T> cols(static_cast<std::size_t>(k) * p);
  std::vector<T> dcols(need_input_grad ? static_cast<std::size_t>(k) * p : 0);
  MatMap<T> dw(weight.grad.data.data(), out_, k);
  ConstMatMap<T> wmat(weight.value.data.data(), out_, k);
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<T> dymat(dy.sample(i), out_, p);
    im2col(x.sample(i), in_, x.h, x.w, stride_, pad_, oh, ow, cols.data());
    dw.noalias() += dymat * ConstMatMap<T>(cols.data(), k, p).transpose();
    // Plain loop: Eigen's vectorized reduction order depends on pointer alignment, and the
    // bias gradient ahead of batch norm is pure roundoff that Adam would amplify.
    for (int o = 0; o < out_; ++o) {
      const T* row = dy.channel(i, o);
      double s = 0;
      for (int j = 0; j < p; ++j) s += row[j];
      bias.grad.data[o] += static_cast<T>(s);
    }
    if (need_input_grad) {
      MatMap<T>(dcols.data(), k, p).noalias() = wmat.transpose() * dymat;
      col2im(dcols.data(), in_, x.h, x.w, stride_, pad_, oh, ow, dx.sample(i));
    }
  }
  return dx;
}

// --- BatchNorm2d ----------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : gamma(name + ".gamma", channels, 1, 1, 1),
      beta(name + ".beta", channels, 1, 1, 1),
      running_mean(channels, 1, 1, 1, T(0)),
      running_var(channels, 1, 1, 1, T(1)),
      name_(name) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  const int channels = x.c;
  const std::size_t plane = x.plane_size();
  const double m = static_cast<double>(x.n) * plane;
  cached_training_ = training;
  inv_std_.assign(channels, T(0));
  xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
  Tensor<T> y(x.n, x.c, x.h, x.w);
  for (int ch = 0; ch < channels; ++ch) {
    double mean, var;
    if (training) {
      double sum = 0;
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.channel(i, ch);
        for (std::size_t j = 0; j < plane; ++j) sum += src[j];
      }
      mean = sum / m;
      double sq = 0;
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.channel(i, ch);
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = src[j] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      running_mean.data[ch] = static_cast<T>((1 - kMomentum) * running_mean.data[ch] + kMomentum * mean);
      running_var.data[ch] = static_cast<T>((1 - kMomentum) * running_var.data[ch] + kMomentum * unbiased);
    } else {
      mean = running_mean.data[ch];
      var = running_var.data[ch];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
    inv_std_[ch] = inv;
    const T g = gamma.value.data[ch], b = beta.value.data[ch], mu = static_cast<T>(mean);
    for (int i = 0; i < x.n; ++i) {
      const T* src = x.channel(i, ch);
      T* xh = xhat_.channel(i, ch);
      T* dst = y.channel(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (src[j] - mu) * inv;
        dst[j] = g * xh[j] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const std::size_t plane = dy.plane_size();
  const double m = static_cast<double>(dy.n) * plane;
  Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (int ch = 0; ch < dy.c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += g[j];
        sum_dy_xhat += static_cast<double>(g[j]) * xh[j];
      }
    }
    gamma.grad.data[ch] += static_cast<T>(sum_dy_xhat);
    beta.grad.data[ch] += static_cast<T>(sum_dy);
    const T scale = gamma.value.data[ch] * inv_std_[ch];
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      T* d = dx.channel(i, ch);
      if (cached_training_) {
        const T mean_dy = static_cast<T>(sum_dy / m), mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
        for (std::size_t j = 0; j < plane; ++j) d[j] = scale * (g[j] - mean_dy - xh[j] * mean_dy_xhat);
      } else {
        for (std::size_t j = 0; j < plane; ++j) d[j] = scale * g[j];
      }
    }
  }
  return dx;
}

// --- ConvBlock ------------------------------------------------------------

template <typename T>
ConvBlock<T>::ConvBlock(const std::string& name, int in_channels, int out_channels, int stride, int pad,
                        bool batch_norm, bool relu)
    : conv(name, in_channels, out_channels, stride, pad), relu_(relu) {
  if (batch_norm) {
    // "enc1.conv2" -> "enc1.bn2"
    std::string bn_name = name;
    if (auto pos = bn_name.rfind("conv"); pos != std::string::npos) bn_name.replace(pos, 4, "bn");
    else bn_name += ".bn";
    bn.emplace(bn_name, out_channels);
  }
}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y = conv.forward(x);
  if (bn) y = bn->forward(y, training);
  if (relu_) {
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    output_ = y;
  }
  return y;
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> g = dy;
  if (relu_)
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(output_.data[i] > T(0))) g.data[i] = T(0);
  if (bn) g = bn->backward(g);
  return conv.backward(g, need_input_grad);
}

template <typename T>
void ConvBlock<T>::collect(std::vector<Param<T>*>& out) {
  conv.collect(out);
  if (bn) bn->collect(out);
}

template <typename T>
void ConvBlock<T>::collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
  if (bn) bn->collect_buffers(out);
}

// --- MaxPool2 -------------------------------------------------------------

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape();
  const int oh = (x.h + 1) / 2, ow = (x.w + 1) / 2;
  Tensor<T> y(x.n, x.c, oh, ow);
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(i, ch);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>(2 * oy * x.w + 2 * ox);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int yy = 2 * oy + dy, xx = 2 * ox + dx;
              if (yy >= x.h || xx >= x.w) continue;
              const auto idx = static_cast<std::uint32_t>(yy * x.w + xx);
              if (src[idx] > src[best]) best = idx;
            }
          argmax_[o] = best;
          y.data[o] = src[best];
        }
    }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  std::size_t o = 0;
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      T* dst = dx.channel(i, ch);
      for (std::size_t j = 0; j < dy.plane_size(); ++j, ++o) dst[argmax_[o]] += dy.data[o];
    }
  return dx;
}

// --- Upsample2 ------------------------------------------------------------

template <typename T>
Tensor<T> Upsample2<T>::forward(const Tensor<T>& x, int target_h, int target_w) {
  in_shape_ = x.shape();
  Tensor<T> y(x.n, x.c, target_h, target_w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(i, ch);
      T* dst = y.channel(i, ch);
      for (int yy = 0; yy < target_h; ++yy) {
        const T* srow = src + static_cast<std::size_t>(std::min(yy / 2, x.h - 1)) * x.w;
        T* drow = dst + static_cast<std::size_t>(yy) * target_w;
        for (int xx = 0; xx < target_w; ++xx) drow[xx] = srow[std::min(xx / 2, x.w - 1)];
      }
    }
  return y;
}

template <typename T>
Tensor<T> Upsample2<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const T* src = dy.channel(i, ch);
      T* dst = dx.channel(i, ch);
      for (int yy = 0; yy < dy.h; ++yy) {
        T* drow = dst + static_cast<std::size_t>(std::min(yy / 2, dx.h - 1)) * dx.w;
        const T* srow = src + static_cast<std::size_t>(yy) * dy.w;
        for (int xx = 0; xx < dy.w; ++xx) drow[std::min(xx / 2, dx.w - 1)] += srow[xx];
      }
    }
  return dx;
}

// --- Linear ---------------------------------------------------------------

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", out_features, in_features, 1, 1), bias(name + ".bias", out_features, 1, 1, 1) {}

template <typename T>
void Linear<T>::init(Rng& rng, double gain) {
  std::normal_distribution<double> normal(0.0, std::sqrt(gain / weight.value.c));
  for (auto& v : weight.value.data) v = static_cast<T>(normal(rng));
  bias.value.zero();
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  const int in = weight.value.c, out = weight.value.n;
  if (static_cast<int>(x.sample_size()) != in) throw ShapeError(weight.name + ": feature length mismatch");
  input_ = x;
  Tensor<T> y(x.n, out, 1, 1);
  for (int i = 0; i < x.n; ++i)
    for (int o = 0; o < out; ++o) {
      T acc = bias.value.data[o];
      for (int k = 0; k < in; ++k) acc += weight.value.data[static_cast<std::size_t>(o) * in + k] * x.sample(i)[k];
      y.sample(i)[o] = acc;
    }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const int in = weight.value.c, out = weight.value.n;
  Tensor<T> dx(input_.n, input_.c, input_.h, input_.w);
  for (int i = 0; i < dy.n; ++i)
    for (int o = 0; o < out; ++o) {
      const T g = dy.sample(i)[o];
      bias.grad.data[o] += g;
      for (int k = 0; k < in; ++k) {
        weight.grad.data[static_cast<std::size_t>(o) * in + k] += g * input_.sample(i)[k];
        dx.sample(i)[k] += g * weight.value.data[static_cast<std::size_t>(o) * in + k];
      }
    }
  return dx;
}

// --- free functions -------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat: spatial or batch mismatch");
  Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int first_channels) {
  Tensor<T> a(dy.n, first_channels, dy.h, dy.w), b(dy.n, dy.c - first_channels, dy.h, dy.w);
  for (int i = 0; i < dy.n; ++i) {
    std::copy_n(dy.sample(i), a.sample_size(), a.sample(i));
    std::copy_n(dy.sample(i) + a.sample_size(), b.sample_size(), b.sample(i));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = dy.data[i] * y.data[i] * (T(1) - y.data[i]);
  return dx;
}

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  Tensor<T> y(x.n, x.c, 1, 1);
  const std::size_t plane = x.plane_size();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      double sum = 0;
      const T* src = x.channel(i, ch);
      for (std::size_t j = 0; j < plane; ++j) sum += src[j];
      y.at(i, ch, 0, 0) = static_cast<T>(sum / plane);
    }
  return y;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.n, dy.c, h, w);
  const T inv = T(1) / static_cast<T>(h * w);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      T* dst = dx.channel(i, ch);
      std::fill(dst, dst + dx.plane_size(), dy.at(i, ch, 0, 0) * inv);
    }
  return dx;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  if (acc.data.empty()) {
    acc = x;
    return;
  }
  if (!acc.same_shape(x)) throw ShapeError("add: shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) acc.data[i] += x.data[i];
}

#define FUNDUS_INSTANTIATE(T)                                                               \
  template class Conv2d<T>;                                                                 \
  template class BatchNorm2d<T>;                                                            \
  template class ConvBlock<T>;                                                              \
  template class MaxPool2<T>;                                                               \
  template class Upsample2<T>;                                                              \
  template class Linear<T>;                                                                 \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> global_average_pool(const Tensor<T>&);                                 \
  template Tensor<T> global_average_pool_backward(const Tensor<T>&, int, int);              \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

FUNDUS_INSTANTIATE(float)
FUNDUS_INSTANTIATE(double)

#undef FUNDUS_INSTANTIATE

}  // namespace fundus::nn
