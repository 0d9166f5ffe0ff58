#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace fundus::nn {

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  [[nodiscard]] std::array<int, 4> shape() const { return {n, c, h, w}; }

  T* sample(int i) { return data.data() + i * sample_size(); }
  const T* sample(int i) const { return data.data() + i * sample_size(); }
  T* channel(int i, int ch) { return sample(i) + ch * plane_size(); }
  const T* channel(int i, int ch) const { return sample(i) + ch * plane_size(); }

  T& at(int i, int ch, int y, int x) { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int i, int ch, int y, int x) const { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }

  template <typename U>
  [[nodiscard]] bool same_shape(const Tensor<U>& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

/// A learnable array with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string name_, int n, int c, int h, int w)
      : name(std::move(name_)), value(n, c, h, w), grad(n, c, h, w) {}
};

}  // namespace fundus::nn
