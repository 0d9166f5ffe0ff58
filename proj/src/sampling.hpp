#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "fundus/image.hpp"

namespace fundus::detail {

inline std::array<double, 3> channel_means(const RgbImage& img) {
  std::array<double, 3> sum{0, 0, 0};
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    for (int ch = 0; ch < 3; ++ch) sum[ch] += img.data[i * 3 + ch];
  const double n = std::max<std::size_t>(img.pixel_count(), 1);
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

/// True if (x, y) lies within the pixel footprint of the raster.
inline bool inside_footprint(double x, double y, int h, int w) {
  return x >= -0.5 && x <= w - 0.5 && y >= -0.5 && y <= h - 0.5;
}

/// Clamp-to-edge bilinear interpolation of a scalar raster accessed through `at(row, col)`.
template <typename At>
double bilinear(At&& at, double x, double y, int h, int w) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace fundus::detail
