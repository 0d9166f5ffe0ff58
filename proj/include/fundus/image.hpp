#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fundus {

/// Row-major single-channel raster.
template <typename T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& operator()(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  const T& operator()(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }

  [[nodiscard]] bool empty() const { return data.empty(); }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] bool contains(int row, int col) const { return row >= 0 && row < height && col >= 0 && col < width; }

  template <typename U>
  [[nodiscard]] bool same_shape(const Plane<U>& other) const {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Binary mask with values in {0, 1}.
using Mask = Plane<std::uint8_t>;
/// Per-pixel probability map.
using SoftMap = Plane<float>;

/// 8-bit RGB image, channels interleaved.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t& operator()(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  std::uint8_t operator()(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }

  [[nodiscard]] bool empty() const { return data.empty(); }
  [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

[[nodiscard]] inline std::size_t count_ones(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

}  // namespace fundus
