#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fundus/image.hpp"

namespace fundus {

/// 2|A & B| / (|A| + |B|); 1 when both are empty.
double hard_dice(const Mask& a, const Mask& b);
/// Inclusive row span of the cup over that of the disc; 0 for an empty cup. Throws EmptyDisc.
double vertical_cdr(const Mask& od, const Mask& oc);
/// Inclusive row span (max - min + 1) of the set pixels, 0 if empty.
int vertical_extent(const Mask& m);

struct RocCurve {
  std::vector<double> thresholds;  ///< descending; first entry is +inf
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0;
};

/// ROC swept over every distinct score (positive iff score >= threshold) with trapezoidal AUC.
/// Throws SingleClass.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);
/// Normalized Mann-Whitney U statistic with ties counted 0.5. Throws SingleClass.
double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels);

struct SensSpec {
  double sensitivity = 0;
  double specificity = 0;
};
SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double cutoff);
/// Cutoff maximizing sensitivity + specificity - 1 (midpoint of the optimal gap; ties go to the
/// larger cutoff). Throws SingleClass.
double youden_cutoff(std::span<const double> scores, std::span<const int> labels);

struct SummaryStat {
  double mean = 0;
  double std = 0;  ///< population form
};
SummaryStat summarize(std::span<const double> values);

struct ImageScores {
  std::string id;
  double dice_od = 0;
  double dice_oc = 0;
  double cdr_pred = 0;
  double cdr_gt = 0;
  double cdr_error = 0;
};

struct SegScores {
  std::vector<ImageScores> per_image;
  SummaryStat dice_od;
  SummaryStat dice_oc;
  SummaryStat cdr_error;
};

struct ReportMetadata {
  std::uint64_t seed = 0;
  std::string config_digest;
  int fold_id = -1;
};

struct EvalReport {
  SegScores segmentation;
  std::optional<SegScores> segmentation_fullres;
  std::optional<RocCurve> roc;
  double cutoff = 0.5;
  double sensitivity = 0;
  double specificity = 0;
  std::vector<std::string> score_ids;
  std::vector<double> scores;
  std::vector<int> labels;
  ReportMetadata metadata;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct Prediction {
  Mask od;
  Mask oc;
  double p_glaucoma = 0;
};

struct Truth {
  Mask od;
  Mask oc;
  std::optional<int> label;
};

SegScores score_segmentation(const std::map<std::string, Prediction>& pred, const std::map<std::string, Truth>& gt);

/// Aggregates segmentation and classification metrics over aligned id sets. Classification
/// metrics are filled only when both classes are present; the cutoff is Youden-optimal unless given.
/// Throws IdMismatch.
EvalReport evaluate_dataset(const std::map<std::string, Prediction>& pred, const std::map<std::string, Truth>& gt,
                            std::optional<double> cutoff = std::nullopt);

/// SVG rendering of a ROC curve.
std::string roc_svg(const RocCurve& roc, const std::string& title);

}  // namespace fundus
