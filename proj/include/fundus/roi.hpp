#pragma once

#include <array>

#include "fundus/image.hpp"

namespace fundus {

/// Square region in source-image pixels; may extend past the image border.
struct RoiBox {
  double center_x = 0;
  double center_y = 0;
  double side = 0;
};

/// A resampled square crop plus the affine map back to the source image.
struct RoiCrop {
  RgbImage image;
  RoiBox box;
  int out_size = 400;
  double scale = 1;  ///< source pixels per ROI pixel

  /// Source (x, y) -> ROI (u, v), both in pixel-center coordinates.
  [[nodiscard]] std::array<double, 2> to_roi(double x, double y) const;
  [[nodiscard]] std::array<double, 2> to_source(double u, double v) const;
};

struct LocateParams {
  double margin_factor = 2.5;
  double percentile = 99.0;
  double radius_min_fraction = 0.02;
  double radius_max_fraction = 0.12;
  /// Detection runs on a copy downscaled to at most this width.
  int working_width = 256;
  double blur_sigma = 1.5;
  /// Closing radius applied to the thresholded map, as a fraction of the working width.
  /// Bridges vessels that cut the bright region into wedges.
  double closing_fraction = 0.02;
  /// Minimum fraction of the circumference that must be supported by edge pixels.
  double accumulator_floor = 0.3;
};

/// Finds the optic disc as the strongest circle on the edge map of the brightest red-channel
/// pixels. Throws NoDiscFound if no accumulator cell clears the floor.
RoiBox locate_disc(const RgbImage& image, const LocateParams& params = {});

/// Bilinear crop; out-of-image samples take the channel-wise image mean.
RoiCrop crop_roi(const RgbImage& image, const RoiBox& box, int out_size = 400);
/// Nearest-neighbor crop of a mask with the same geometry; out-of-image samples are 0.
Mask crop_mask(const Mask& mask, const RoiBox& box, int out_size = 400);

/// Binary masks map back with nearest neighbor, soft maps with bilinear interpolation.
/// Source pixels outside the box are zero.
Mask map_mask_back(const Mask& roi_mask, const RoiCrop& crop, int source_height, int source_width);
SoftMap map_mask_back(const SoftMap& roi_map, const RoiCrop& crop, int source_height, int source_width);

}  // namespace fundus
