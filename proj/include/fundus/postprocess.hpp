#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "fundus/ellipse.hpp"
#include "fundus/image.hpp"

namespace fundus {

struct PostprocessParams {
  double threshold = 0.5;
  /// Disk radius in pixels at the reference ROI size; scaled with the actual map size.
  int opening_radius = 5;
  int reference_size = 400;
  int connectivity = 8;
  bool fit_ellipse_od = true;
  bool enforce_cup_in_disc = false;

  void validate() const;
  /// Radius to use on a map of the given side.
  [[nodiscard]] int scaled_radius(int side) const;
};

/// 1 iff soft >= threshold.
Mask binarize(const SoftMap& soft, double threshold);
Mask erode(const Mask& mask, int radius);
Mask dilate(const Mask& mask, int radius);
/// Erosion then dilation with a discrete disk {dx^2 + dy^2 <= r^2}.
Mask morphological_opening(const Mask& mask, int radius);

/// Keeps the largest component; ties go to the one whose first pixel in raster order comes first.
Mask largest_component(const Mask& mask, int connectivity = 8);
/// Number of components under the given connectivity.
int count_components(const Mask& mask, int connectivity = 8);

/// Sets background pixels that cannot reach the image border (4-connected) to foreground.
Mask fill_holes(const Mask& mask);

/// Foreground pixels with a background (or out-of-image) 4-neighbour, as (x = col, y = row).
std::vector<Eigen::Vector2d> boundary_points(const Mask& mask);

/// Midpoints between each foreground pixel and each of its background 4-neighbours. These sit on
/// the pixel-edge contour, half a pixel outside the boundary pixel centers.
std::vector<Eigen::Vector2d> boundary_edge_points(const Mask& mask);

/// Conic coefficients (A, B, C, D, E, F) of A x^2 + B xy + C y^2 + D x + E y + F = 0,
/// scaled so that 4AC - B^2 = 1.
using Conic = Eigen::Matrix<double, 6, 1>;
/// Direct least-squares conic fit under the ellipse constraint. Throws InsufficientBoundary
/// for fewer than 5 points and DegenerateFit when no ellipse solution exists.
Conic fit_ellipse_conic(const std::vector<Eigen::Vector2d>& points);
Ellipse conic_to_ellipse(const Conic& conic);
Conic ellipse_to_conic(const Ellipse& e);
/// Mean squared algebraic residual of the points under a normalized conic.
double mean_algebraic_residual(const Conic& conic, const std::vector<Eigen::Vector2d>& points);

/// Fits the outer boundary of a single-component mask; interior holes are ignored.
Ellipse fit_ellipse(const Mask& mask);

struct PostprocessResult {
  Mask od;
  Mask oc;
  std::vector<std::string> warnings;
};

/// binarize -> opening -> largest component for both maps; the disc is then replaced by its
/// ellipse fit. Failures degrade to the unrefined mask and are recorded as warnings.
PostprocessResult postprocess_pair(const SoftMap& od_soft, const SoftMap& oc_soft, const PostprocessParams& params = {});

}  // namespace fundus
