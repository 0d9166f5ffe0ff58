#include "fundus/ellipse.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fundus {

Ellipse Ellipse::normalized() const {
  Ellipse e = *this;
  if (e.b > e.a) {
    std::swap(e.a, e.b);
    e.theta += std::numbers::pi / 2;
  }
  e.theta = std::fmod(e.theta, std::numbers::pi);
  if (e.theta < 0) e.theta += std::numbers::pi;
  if (e.theta >= std::numbers::pi) e.theta = 0;
  return e;
}

double Ellipse::implicit_value(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double dx = x - cx, dy = y - cy;
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return (u * u) / (a * a) + (v * v) / (b * b);
}

double Ellipse::vertical_half_extent() const {
  const double c = std::cos(theta), s = std::sin(theta);
  return std::sqrt(a * a * s * s + b * b * c * c);
}

bool Ellipse::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(theta) && a > 0 && b > 0 && std::isfinite(a) &&
         std::isfinite(b);
}

Mask rasterize_ellipse(const Ellipse& e, int height, int width) {
  Mask m(height, width, 0);
  if (!e.valid()) return m;
  // Bounding box of the continuous ellipse, clipped to the raster.
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double half_w = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
  const double half_h = e.vertical_half_extent();
  const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - half_h)) - 1);
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(e.cy + half_h)) + 1);
  const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - half_w)) - 1);
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(e.cx + half_w)) + 1);
  for (int r = r0; r <= r1; ++r)
    for (int col = c0; col <= c1; ++col)
      if (e.implicit_value(col, r) <= 1.0) m(r, col) = 1;
  return m;
}

}  // namespace fundus
