#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fundus/nn/tensor.hpp"
#include "fundus/random.hpp"

namespace fundus::nn {

/// 3x3 convolution with bias. Output side = (side + 2 * pad - 3) / stride + 1.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int stride, int pad);

  [[nodiscard]] int output_side(int side) const { return (side + 2 * pad_ - 3) / stride_ + 1; }
  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients; returns dL/dx unless need_input_grad is false.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  /// Zero-mean normal weights with variance gain / fan_in, zero bias.
  void init(Rng& rng, double gain);

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0;
  int out_ = 0;
  int stride_ = 1;
  int pad_ = 1;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  /// Training mode normalizes with batch statistics and updates the running estimates.
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back(name_ + ".running_mean", &running_mean);
    out.emplace_back(name_ + ".running_var", &running_var);
  }

  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

 private:
  std::string name_;
  bool cached_training_ = false;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

/// conv -> optional batch norm -> optional ReLU.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, int stride, int pad, bool batch_norm,
            bool relu);

  [[nodiscard]] int output_side(int side) const { return conv.output_side(side); }
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void init(Rng& rng) { conv.init(rng, relu_ ? 2.0 : 1.0); }
  void collect(std::vector<Param<T>*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out);

  Conv2d<T> conv;
  std::optional<BatchNorm2d<T>> bn;

 private:
  bool relu_ = true;
  Tensor<T> output_;
};

/// 2x2 max pooling, ceil mode.
template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::array<int, 4> in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

/// Nearest-neighbor x2 upsampling, cropped to a target size.
template <typename T>
class Upsample2 {
 public:
  Tensor<T> forward(const Tensor<T>& x, int target_h, int target_w);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::array<int, 4> in_shape_{};
};

/// Fully connected layer on (B, in) features stored as Tensor(B, in, 1, 1).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void init(Rng& rng, double gain);
  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  Tensor<T> input_;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits dy along channels into the first `first_channels` and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int first_channels);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// dL/dx given dL/dy and y = sigmoid(x).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y);

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, int h, int w);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x);

}  // namespace fundus::nn
