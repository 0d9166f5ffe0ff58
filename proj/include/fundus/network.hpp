#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fundus/nn/layers.hpp"
#include "fundus/nn/tensor.hpp"

namespace fundus {

/// Layer widths of the multi-task network. Defaults reproduce the published terminal shapes:
/// a 25x25x128 encoder output, 12x12x5 appearance and 12x12x48 structural maps, 53 pooled features.
struct ArchitectureConfig {
  int input_side = 400;
  int in_channels = 3;
  std::vector<int> encoder_widths{16, 32, 64, 128};
  /// Deepest stage first.
  std::vector<int> decoder_widths{64, 32, 16, 16};
  int appearance_filters = 5;
  std::vector<int> structural_widths{8, 16, 24, 32, 48};
  int bottleneck_channels = 128;
  bool batch_norm = true;
  std::int64_t parameter_budget = 700000;

  /// Throws ConfigShapeError when the widths cannot realize the mandated shapes.
  void validate() const;

  /// Same topology at a smaller input and, optionally, halved channel widths.
  static ArchitectureConfig reduced(int input_side, bool narrow);

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchitectureConfig& c);
void from_json(const nlohmann::json& j, ArchitectureConfig& c);

/// Spatial side and channel count of a feature map.
struct MapShape {
  int side = 0;
  int channels = 0;
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

struct ShapeLedger {
  std::vector<int> encoder_sides;  ///< input side followed by each pooled side
  MapShape bottleneck;
  MapShape appearance;
  MapShape structural;
  int pooled_features = 0;
  int outputs = 0;
  friend bool operator==(const ShapeLedger&, const ShapeLedger&) = default;
};

/// Shapes implied by a configuration (no model needed).
ShapeLedger plan_shapes(const ArchitectureConfig& cfg);

template <typename T>
struct ModelOutputs {
  nn::Tensor<T> od;     ///< B x 1 x S x S, sigmoid
  nn::Tensor<T> oc;     ///< B x 1 x S x S, sigmoid
  std::vector<T> p;     ///< B glaucoma probabilities
};

/// Loss gradients with respect to each model output.
template <typename T>
struct OutputGrads {
  nn::Tensor<T> od;
  nn::Tensor<T> oc;
  std::vector<T> p;
};

template <typename T>
class MultiTaskNet {
 public:
  explicit MultiTaskNet(ArchitectureConfig cfg, std::uint64_t seed = 0);

  [[nodiscard]] const ArchitectureConfig& config() const { return cfg_; }

  /// Input is B x 3 x S x S with values in [0, 1]. Throws ShapeError on wrong size.
  ModelOutputs<T> forward(const nn::Tensor<T>& input);
  /// Backpropagates through the last forward pass, accumulating parameter gradients.
  void backward(const OutputGrads<T>& grads);
  void zero_grad();

  void set_training(bool training) { training_ = training; }
  [[nodiscard]] bool training() const { return training_; }

  std::vector<nn::Param<T>*> parameters();
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers();
  [[nodiscard]] std::size_t count_parameters() const;
  /// Learnable scalars of the single-neuron classifier.
  [[nodiscard]] std::size_t classifier_parameter_count() const;
  /// Shapes observed during the most recent forward pass.
  [[nodiscard]] const ShapeLedger& observed_shapes() const { return observed_; }

 private:
  struct EncoderStage {
    nn::ConvBlock<T> conv1, conv2;
    nn::MaxPool2<T> pool;
  };
  struct DecoderStage {
    nn::Upsample2<T> up;
    nn::ConvBlock<T> conv0, conv1, conv2;
    int up_channels = 0;
  };

  ArchitectureConfig cfg_;
  bool training_ = true;
  std::vector<EncoderStage> encoder_;
  std::vector<DecoderStage> decoder_;
  nn::ConvBlock<T> head_od_, head_oc_;
  nn::ConvBlock<T> appear_;
  std::vector<nn::ConvBlock<T>> structural_;
  nn::Linear<T> classifier_;

  // Cached activations needed by backward.
  ModelOutputs<T> out_;
  int feature_h_ = 0, feature_w_ = 0;
  ShapeLedger observed_;
};

}  // namespace fundus
