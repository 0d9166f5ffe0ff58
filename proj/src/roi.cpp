#include "fundus/roi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "fundus/errors.hpp"
#include "fundus/postprocess.hpp"
#include "sampling.hpp"

namespace fundus {

// Box coordinates are continuous: pixel (r, c) covers [c, c+1) x [r, r+1).
std::array<double, 2> RoiCrop::to_roi(double x, double y) const {
  const double left = box.center_x - box.side / 2, top = box.center_y - box.side / 2;
  return {(x + 0.5 - left) / scale - 0.5, (y + 0.5 - top) / scale - 0.5};
}

std::array<double, 2> RoiCrop::to_source(double u, double v) const {
  const double left = box.center_x - box.side / 2, top = box.center_y - box.side / 2;
  return {left + (u + 0.5) * scale - 0.5, top + (v + 0.5) * scale - 0.5};
}

namespace {

Plane<float> gaussian_blur(const Plane<float>& in, double sigma) {
  if (sigma <= 0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= sum;

  Plane<float> tmp(in.height, in.width), out(in.height, in.width);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * in(r, std::clamp(c + i, 0, in.width - 1));
      tmp(r, c) = static_cast<float>(acc);
    }
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(std::clamp(r + i, 0, in.height - 1), c);
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

/// Red channel resampled to the working resolution with area averaging.
Plane<float> working_red(const RgbImage& image, double scale) {
  const int h = std::max(1, static_cast<int>(std::lround(image.height * scale)));
  const int w = std::max(1, static_cast<int>(std::lround(image.width * scale)));
  Plane<float> out(h, w);
  const double sy = static_cast<double>(image.height) / h, sx = static_cast<double>(image.width) / w;
  for (int r = 0; r < h; ++r) {
    const int r0 = static_cast<int>(std::floor(r * sy)), r1 = std::max(r0 + 1, static_cast<int>(std::floor((r + 1) * sy)));
    for (int c = 0; c < w; ++c) {
      const int c0 = static_cast<int>(std::floor(c * sx)), c1 = std::max(c0 + 1, static_cast<int>(std::floor((c + 1) * sx)));
      double acc = 0;
      int n = 0;
      for (int y = r0; y < std::min(r1, image.height); ++y)
        for (int x = c0; x < std::min(c1, image.width); ++x, ++n) acc += image(y, x, 0);
      out(r, c) = static_cast<float>(acc / std::max(n, 1));
    }
  }
  return out;
}

}  // namespace

RoiBox locate_disc(const RgbImage& image, const LocateParams& params) {
  if (image.empty()) throw NoDiscFound("empty image");
  const double scale = std::min(1.0, static_cast<double>(params.working_width) / image.width);
  const Plane<float> red = gaussian_blur(working_red(image, scale), params.blur_sigma);
  const int h = red.height, w = red.width;

  // Intensity thresholding at the requested percentile.
  std::vector<float> sorted = red.data;
  const auto rank = static_cast<std::size_t>(
      std::clamp(params.percentile / 100.0 * (sorted.size() - 1), 0.0, static_cast<double>(sorted.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
  const float threshold = sorted[rank];
  Mask bright(h, w, 0);
  for (std::size_t i = 0; i < red.size(); ++i) bright.data[i] = red.data[i] >= threshold;
  // A flat image puts everything at the percentile.
  if (count_ones(bright) > red.size() / 2) throw NoDiscFound("no distinct bright region");
  if (const int close = static_cast<int>(std::lround(params.closing_fraction * w)); close > 0)
    bright = erode(dilate(bright, close), close);

  // Edge map: bright pixels with a 4-neighbour below threshold.
  std::vector<std::array<int, 2>> edges;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!bright(r, c)) continue;
      const bool edge = (r > 0 && !bright(r - 1, c)) || (r + 1 < h && !bright(r + 1, c)) ||
                        (c > 0 && !bright(r, c - 1)) || (c + 1 < w && !bright(r, c + 1));
      if (edge) edges.push_back({r, c});
    }
  if (edges.empty()) throw NoDiscFound("no bright structure above the intensity threshold");

  const int r_min = std::max(2, static_cast<int>(std::ceil(params.radius_min_fraction * w)));
  const int r_max = std::max(r_min, static_cast<int>(std::floor(params.radius_max_fraction * w)));
  const int n_radii = r_max - r_min + 1;
  std::vector<std::uint16_t> acc(static_cast<std::size_t>(n_radii) * h * w, 0);
  std::vector<std::array<int, 2>> offsets;
  for (int ri = 0; ri < n_radii; ++ri) {
    const int radius = r_min + ri;
    // Unique integer offsets on the digital circle of this radius.
    offsets.clear();
    const int steps = static_cast<int>(std::ceil(2 * std::numbers::pi * radius * 1.5));
    for (int s = 0; s < steps; ++s) {
      const double a = 2 * std::numbers::pi * s / steps;
      offsets.push_back({static_cast<int>(std::lround(radius * std::sin(a))), static_cast<int>(std::lround(radius * std::cos(a)))});
    }
    std::ranges::sort(offsets);
    offsets.erase(std::unique(offsets.begin(), offsets.end()), offsets.end());
    std::uint16_t* layer = acc.data() + static_cast<std::size_t>(ri) * h * w;
    for (const auto& [er, ec] : edges)
      for (const auto& [dr, dc] : offsets) {
        const int y = er + dr, x = ec + dc;
        if (y >= 0 && y < h && x >= 0 && x < w && layer[y * w + x] < 65535) ++layer[y * w + x];
      }
  }

  // Votes from adjacent radii are pooled so slightly elliptical rims still peak in one cell.
  double best_score = 0;
  int best_r = 0, best_y = 0, best_x = 0;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ri = 0; ri < n_radii; ++ri) {
    const double circumference = 2 * std::numbers::pi * (r_min + ri);
    const std::uint16_t* layer = acc.data() + static_cast<std::size_t>(ri) * plane;
    const std::uint16_t* below = ri > 0 ? layer - plane : nullptr;
    const std::uint16_t* above = ri + 1 < n_radii ? layer + plane : nullptr;
    for (std::size_t i = 0; i < plane; ++i) {
      const double votes = layer[i] + (below ? below[i] : 0) + (above ? above[i] : 0);
      const double score = votes / circumference;
      if (score > best_score) {
        best_score = score;
        best_r = r_min + ri;
        best_y = static_cast<int>(i / w);
        best_x = static_cast<int>(i % w);
      }
    }
  }
  if (best_score < params.accumulator_floor) throw NoDiscFound("no Hough peak above the accumulator floor");

  // The thresholded region can be a partial disc whose rim arcs support only a small circle;
  // the equivalent radius of the bright component under the peak bounds the radius from below.
  std::array<int, 2> seed{best_y, best_x};
  if (!bright(best_y, best_x)) {
    long best_d = std::numeric_limits<long>::max();
    for (const auto& e : edges) {
      const long d = static_cast<long>(e[0] - best_y) * (e[0] - best_y) + static_cast<long>(e[1] - best_x) * (e[1] - best_x);
      if (d < best_d) {
        best_d = d;
        seed = e;
      }
    }
  }
  std::size_t area = 0;
  {
    Mask seen(h, w, 0);
    std::vector<std::array<int, 2>> stack{seed};
    seen(seed[0], seed[1]) = 1;
    while (!stack.empty()) {
      const auto [r, c] = stack.back();
      stack.pop_back();
      ++area;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int y = r + dr, x = c + dc;
          if (y < 0 || y >= h || x < 0 || x >= w || seen(y, x) || !bright(y, x)) continue;
          seen(y, x) = 1;
          stack.push_back({y, x});
        }
    }
  }
  const double radius = std::max(static_cast<double>(best_r), std::sqrt(area / std::numbers::pi));

  const double sx = static_cast<double>(image.width) / w, sy = static_cast<double>(image.height) / h;
  RoiBox box;
  box.center_x = (best_x + 0.5) * sx;
  box.center_y = (best_y + 0.5) * sy;
  box.side = params.margin_factor * 2.0 * radius * std::max(sx, sy);
  return box;
}

RoiCrop crop_roi(const RgbImage& image, const RoiBox& box, int out_size) {
  if (!(box.side > 0)) throw ConfigError("ROI side must be positive");
  RoiCrop crop;
  crop.box = box;
  crop.out_size = out_size;
  crop.scale = box.side / out_size;
  crop.image = RgbImage(out_size, out_size);
  const auto fill = detail::channel_means(image);
  for (int v = 0; v < out_size; ++v)
    for (int u = 0; u < out_size; ++u) {
      const auto [x, y] = crop.to_source(u, v);
      const bool inside = detail::inside_footprint(x, y, image.height, image.width);
      for (int ch = 0; ch < 3; ++ch) {
        const double value =
            inside ? detail::bilinear([&](int r, int c) { return static_cast<double>(image(r, c, ch)); }, x, y,
                                      image.height, image.width)
                   : fill[ch];
        crop.image(v, u, ch) = detail::to_u8(value);
      }
    }
  return crop;
}

Mask crop_mask(const Mask& mask, const RoiBox& box, int out_size) {
  RoiCrop geometry;
  geometry.box = box;
  geometry.out_size = out_size;
  geometry.scale = box.side / out_size;
  Mask out(out_size, out_size, 0);
  for (int v = 0; v < out_size; ++v)
    for (int u = 0; u < out_size; ++u) {
      const auto [x, y] = geometry.to_source(u, v);
      const int c = static_cast<int>(std::floor(x + 0.5)), r = static_cast<int>(std::floor(y + 0.5));
      if (mask.contains(r, c)) out(v, u) = mask(r, c);
    }
  return out;
}

namespace {

template <typename T, typename Sample>
Plane<T> map_back(const RoiCrop& crop, int source_height, int source_width, Sample&& sample) {
  Plane<T> out(source_height, source_width, T{0});
  const double left = crop.box.center_x - crop.box.side / 2, top = crop.box.center_y - crop.box.side / 2;
  const int c0 = std::max(0, static_cast<int>(std::floor(left - 0.5)));
  const int c1 = std::min(source_width - 1, static_cast<int>(std::ceil(left + crop.box.side)));
  const int r0 = std::max(0, static_cast<int>(std::floor(top - 0.5)));
  const int r1 = std::min(source_height - 1, static_cast<int>(std::ceil(top + crop.box.side)));
  for (int r = r0; r <= r1; ++r) {
    const double ye = r + 0.5;
    if (ye < top || ye >= top + crop.box.side) continue;
    for (int c = c0; c <= c1; ++c) {
      const double xe = c + 0.5;
      if (xe < left || xe >= left + crop.box.side) continue;
      const auto [u, v] = crop.to_roi(c, r);
      out(r, c) = sample(u, v);
    }
  }
  return out;
}

}  // namespace

Mask map_mask_back(const Mask& roi_mask, const RoiCrop& crop, int source_height, int source_width) {
  return map_back<std::uint8_t>(crop, source_height, source_width, [&](double u, double v) {
    const int uc = std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, roi_mask.width - 1);
    const int vc = std::clamp(static_cast<int>(std::floor(v + 0.5)), 0, roi_mask.height - 1);
    return roi_mask(vc, uc);
  });
}

SoftMap map_mask_back(const SoftMap& roi_map, const RoiCrop& crop, int source_height, int source_width) {
  return map_back<float>(crop, source_height, source_width, [&](double u, double v) {
    return static_cast<float>(detail::bilinear([&](int r, int c) { return static_cast<double>(roi_map(r, c)); }, u, v,
                                               roi_map.height, roi_map.width));
  });
}

}  // namespace fundus
