#pragma once

#include "fundus/image.hpp"

namespace fundus {

/// Ellipse with semi-axes a >= b > 0; theta is the angle of the a-axis from the +x (column)
/// direction toward +y (row), normalized to [0, pi).
struct Ellipse {
  double cx = 0;
  double cy = 0;
  double a = 1;
  double b = 1;
  double theta = 0;

  /// Swaps axes if needed so a >= b and wraps theta into [0, pi).
  [[nodiscard]] Ellipse normalized() const;
  /// Value of the implicit form at (x, y); <= 1 inside.
  [[nodiscard]] double implicit_value(double x, double y) const;
  /// Half of the vertical (row) extent of the continuous ellipse.
  [[nodiscard]] double vertical_half_extent() const;
  [[nodiscard]] bool valid() const;
};

/// Pixel (row, col) is set iff the ellipse inequality holds at the pixel center (x = col, y = row).
Mask rasterize_ellipse(const Ellipse& e, int height, int width);

}  // namespace fundus
