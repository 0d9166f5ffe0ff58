#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/augment.hpp"
#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/dataset.hpp"
#include "fundus/errors.hpp"
#include "fundus/losses.hpp"
#include "fundus/metrics.hpp"
#include "fundus/network.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/roi.hpp"

namespace fundus {

struct EpochRecord {
  int epoch = 0;
  loss::LossBreakdown train;
  loss::LossBreakdown val;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// Columns: epoch,l_od,l_cp,l_cls,total,val_total. Timing is left out so logs of
  /// deterministic runs compare equal byte for byte.
  [[nodiscard]] std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Non-finite training loss. Carries everything logged up to the failure.
class DivergedLoss : public Error {
 public:
  DivergedLoss(const std::string& what, TrainLog log) : Error(what), log_(std::move(log)) {}
  [[nodiscard]] const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

/// Patience counter on a minimized quantity; only strict improvements reset it.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Returns true when `value` is a new best.
  bool update(double value);
  [[nodiscard]] bool should_stop() const { return since_best_ >= patience_; }
  [[nodiscard]] double best() const { return best_; }
  /// Zero-based index of the update that produced the best value, -1 before any update.
  [[nodiscard]] int best_index() const { return best_index_; }

 private:
  int patience_;
  int seen_ = 0;
  int since_best_ = 0;
  int best_index_ = -1;
  double best_;
};

/// Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<nn::Param<float>*> params, double lr, double beta1, double beta2, double eps);
  void step();
  [[nodiscard]] long steps() const { return t_; }

 private:
  std::vector<nn::Param<float>*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

/// Images scaled to [0, 1] in a B x 3 x S x S tensor. All images must share one size.
nn::Tensor<float> to_input_tensor(std::span<const RgbImage> images);

/// Loss of a model in evaluation mode over samples with full ground truth, as a sample-weighted mean.
loss::LossBreakdown evaluate_loss(MultiTaskNet<float>& model, std::span<const FundusSample> samples,
                                  const loss::LossWeights& weights, int batch_size);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Samples must already be ROI crops at the architecture input size with masks and labels.
/// Throws MissingGroundTruth, ShapeError, DivergedLoss.
TrainResult train(std::span<const FundusSample> train_samples, std::span<const FundusSample> val_samples,
                  const ArchitectureConfig& arch, const TrainConfig& cfg, int fold_id = -1,
                  const EpochCallback& on_epoch = {});

/// Stratified early-stopping split taking one of min(k, smallest class count) parts. Empty when
/// that is below two; callers then validate on the training data itself.
std::optional<FoldSplit> inner_validation_split(std::span<const Label> labels, int k, std::uint64_t seed);

/// A crop with its geometry, and the cropped masks when the source had them.
struct RoiSample {
  FundusSample roi;
  RoiCrop crop;
  bool used_fallback = false;
};

/// locate_disc then crop. When detection fails and the source carries a disc mask, the box is
/// centered on the disc bounding box instead (margin_factor times its larger side).
RoiSample prepare_roi(const FundusSample& sample, const LocateParams& locate, int out_size);

/// Per-model outputs averaged in double precision.
struct EnsembleOutputs {
  nn::Tensor<double> od;
  nn::Tensor<double> oc;
  std::vector<double> p;
};

/// Element-wise mean over models. Throws ArchitectureMismatch when configs differ.
EnsembleOutputs ensemble_predict(std::span<MultiTaskNet<float>* const> models, const nn::Tensor<float>& input);
EnsembleOutputs ensemble_predict(std::span<const Checkpoint> checkpoints, const nn::Tensor<float>& input);

/// Holds instantiated models so repeated inference does not rebuild them.
class Ensemble {
 public:
  explicit Ensemble(std::span<const Checkpoint> checkpoints);
  EnsembleOutputs predict(const nn::Tensor<float>& input);
  [[nodiscard]] const ArchitectureConfig& architecture() const { return models_.front().config(); }
  [[nodiscard]] std::size_t size() const { return models_.size(); }

 private:
  std::vector<MultiTaskNet<float>> models_;
};

SoftMap soft_map(const nn::Tensor<double>& t, int index);

struct InferenceResult {
  Mask od_full;
  Mask oc_full;
  double p_glaucoma = 0;
  /// 0 when the refined disc is empty.
  double cdr = 0;
  RoiBox box;
  SoftMap od_soft;  ///< ROI resolution
  SoftMap oc_soft;
  Mask od_roi;
  Mask oc_roi;
  std::vector<std::string> warnings;
};

/// locate -> crop -> ensemble -> post-process -> map back -> vertical CDR. Throws NoDiscFound.
InferenceResult infer_end_to_end(const RgbImage& image, Ensemble& ensemble, const PostprocessParams& post,
                                 const LocateParams& locate = {});

struct FoldResult {
  Checkpoint checkpoint;
  EvalReport report;
  TrainLog log;
  int roi_fallbacks = 0;
};

/// Stratified k-fold training and held-out evaluation with post-processing. Early stopping uses an
/// inner stratified split of the training part (cfg.train.inner_val_folds).
std::vector<FoldResult> cross_validate(std::span<const FundusSample> dataset, int k, const PipelineConfig& cfg,
                                       const EpochCallback& on_epoch = {});

}  // namespace fundus
