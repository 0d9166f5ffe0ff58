#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fundus/augment.hpp"
#include "fundus/dataset.hpp"
#include "fundus/losses.hpp"
#include "fundus/network.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/roi.hpp"

namespace fundus {

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience_epochs = 20;
  int max_epochs = 300;
  /// Validation quantity watched by early stopping: "total", "od", "cp" or "cls".
  std::string early_stop_term = "total";
  loss::LossWeights loss_weights;
  AugmentConfig augment;
  /// Center the color-transfer priors on the training set statistics.
  bool priors_from_data = true;
  std::size_t pca_max_pixels = 1'000'000;
  double oversample_target = 0.5;
  /// The inner early-stopping split takes one of this many stratified parts of the training data.
  int inner_val_folds = 8;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
  /// Hex FNV-1a digest of the canonical JSON form.
  [[nodiscard]] std::string digest() const;
};

/// Everything the CLI reads from --config.
struct PipelineConfig {
  ArchitectureConfig architecture;
  TrainConfig train;
  PostprocessParams postprocess;
  LocateParams locate;
  LabelEncoding encoding;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void to_json(nlohmann::json& j, const PostprocessParams& c);
void from_json(const nlohmann::json& j, PostprocessParams& c);
void to_json(nlohmann::json& j, const LocateParams& c);
void from_json(const nlohmann::json& j, LocateParams& c);
void to_json(nlohmann::json& j, const LabelEncoding& c);
void from_json(const nlohmann::json& j, LabelEncoding& c);
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

namespace loss {
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
}  // namespace loss

/// Missing keys keep their defaults. Throws ConfigError on unreadable files.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace fundus
