#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fundus/dataset.hpp"
#include "fundus/image.hpp"
#include "fundus/random.hpp"

namespace fundus {

struct GaussianPrior {
  double mean = 0;
  double std = 0;
};

struct AugmentConfig {
  double max_shift = 20.0;      ///< pixels at a 400-pixel input; train() rescales to the actual side
  double max_rotation = 15.0;   ///< degrees
  std::array<GaussianPrior, 3> color_mean_prior{{{128, 15}, {128, 15}, {128, 15}}};
  std::array<GaussianPrior, 3> color_std_prior{{{40, 5}, {40, 5}, {40, 5}}};
  double pca_scale = 0.005;
  bool enable_geometric = true;
  bool enable_color_transfer = true;
  bool enable_pca = true;

  void validate() const;
};

struct ColorStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Channel covariance eigenbasis; eigenvalues descending, eigenvectors in columns.
struct PcaBasis {
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
  Eigen::Matrix3d eigenvectors = Eigen::Matrix3d::Identity();
};

/// Rigid transform about the image center: rotate by angle, then shift.
struct GeometricTransform {
  double shift_x = 0;
  double shift_y = 0;
  double angle_degrees = 0;
};

GeometricTransform sample_geometric(const AugmentConfig& cfg, Rng& rng);
/// Image resampled bilinearly (uncovered pixels take the channel mean), masks by nearest neighbor.
FundusSample apply_geometric(const FundusSample& sample, const GeometricTransform& t);
FundusSample random_geometric(const FundusSample& sample, const AugmentConfig& cfg, Rng& rng);

ColorStats channel_stats(const RgbImage& image);
/// Unclipped, unquantized result of the per-channel affine statistics transfer (interleaved RGB).
std::vector<double> color_transfer_raw(const RgbImage& image, const ColorStats& target);
RgbImage color_transfer(const RgbImage& image, const ColorStats& target);
ColorStats sample_target_stats(const AugmentConfig& cfg, Rng& rng);

/// pixels is N x 3. Throws DegenerateSample when N < 3.
PcaBasis fit_pca_basis(const Eigen::MatrixX3d& pixels);
/// Uniform subsample of at most max_pixels RGB values drawn across the given images.
Eigen::MatrixX3d sample_pixels(std::span<const RgbImage> images, std::size_t max_pixels, Rng& rng);
/// Offset P * (alpha .* lambda) with alpha ~ N(0, pca_scale^2) drawn once.
Eigen::Vector3d sample_pca_offset(const PcaBasis& basis, double pca_scale, Rng& rng);
RgbImage pca_color_jitter(const RgbImage& image, const PcaBasis& basis, const AugmentConfig& cfg, Rng& rng);

/// Priors centered on the dataset statistics: mean prior (channel mean, 15), std prior (channel std, 5).
void set_priors_from_data(AugmentConfig& cfg, std::span<const RgbImage> images);

/// geometric -> color transfer -> PCA jitter, each gated by its enable flag.
FundusSample augment_sample(const FundusSample& sample, const AugmentConfig& cfg, const PcaBasis& basis, Rng& rng);

}  // namespace fundus
