#pragma once

#include <cstdint>
#include <filesystem>

#include "fundus/image.hpp"

namespace fundus::io {

/// Reads any OpenCV-decodable color image as RGB. Throws CorruptImage.
RgbImage read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const RgbImage& image);

/// Reads an 8-bit single-channel image (color files are converted to gray).
Plane<std::uint8_t> read_gray8(const std::filesystem::path& path);
void write_gray8(const std::filesystem::path& path, const Plane<std::uint8_t>& plane);

/// Soft maps are stored as 16-bit grayscale PNG with probability = value / 65535.
SoftMap read_softmap(const std::filesystem::path& path);
void write_softmap(const std::filesystem::path& path, const SoftMap& map);

}  // namespace fundus::io
