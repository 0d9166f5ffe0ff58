#pragma once

#include <span>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/network.hpp"

namespace fundus::loss {

inline constexpr double kDiceEps = 1e-6;
inline constexpr double kBceDelta = 1e-7;

struct LossWeights {
  double od = 1.0;
  double cp = 1.0;
  double cls = 1.0;

  /// Throws ConfigError on negative weights or when all are zero.
  void validate() const;
};

struct LossBreakdown {
  double l_od = 0;
  double l_cp = 0;
  double l_cls = 0;
  double total = 0;
};

/// (2 sum r*y + eps) / (sum r + sum y + eps). Throws ShapeMismatch on length mismatch.
template <typename T>
double soft_dice(std::span<const T> r, std::span<const T> y);
double soft_dice(const SoftMap& r, const Mask& y);

template <typename T>
double dice_loss(std::span<const T> r, std::span<const T> y);
/// Returns 1 - soft_dice and writes d(loss)/dr into grad (same length as r).
template <typename T>
double dice_loss_grad(std::span<const T> r, std::span<const T> y, std::span<T> grad);

/// Binary cross-entropy with p clamped to [delta, 1 - delta].
double bce(double p, int label);
/// d(bce)/dp; zero where the clamp is active.
double bce_grad(double p, int label);

template <typename T>
struct GroundTruth {
  nn::Tensor<T> od;           ///< B x 1 x S x S in {0, 1}
  nn::Tensor<T> oc;
  std::vector<int> labels;    ///< B labels in {0, 1}
};

/// Batch-mean of each term and their weighted sum; fills grads when non-null.
/// Throws MissingGroundTruth when a ground-truth piece is absent or misaligned.
template <typename T>
LossBreakdown total_loss(const ModelOutputs<T>& out, const GroundTruth<T>& gt, const LossWeights& w,
                         OutputGrads<T>* grads = nullptr);

}  // namespace fundus::loss
