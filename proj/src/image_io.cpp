#include "fundus/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fundus/errors.hpp"

namespace fundus::io {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void checked_write(const std::filesystem::path& path, const cv::Mat& mat) {
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mat)) throw Error("failed to write image " + path.string());
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw CorruptImage("cannot decode image " + path.string());
  RgbImage out(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      out(r, c, 0) = row[c][2];
      out(r, c, 1) = row[c][1];
      out(r, c, 2) = row[c][0];
    }
  }
  return out;
}

void write_rgb(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int r = 0; r < image.height; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < image.width; ++c) row[c] = cv::Vec3b(image(r, c, 2), image(r, c, 1), image(r, c, 0));
  }
  checked_write(path, bgr);
}

Plane<std::uint8_t> read_gray8(const std::filesystem::path& path) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw CorruptImage("cannot decode image " + path.string());
  Plane<std::uint8_t> out(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r) std::copy_n(g.ptr<std::uint8_t>(r), g.cols, &out(r, 0));
  return out;
}

void write_gray8(const std::filesystem::path& path, const Plane<std::uint8_t>& plane) {
  cv::Mat g(plane.height, plane.width, CV_8UC1);
  for (int r = 0; r < plane.height; ++r) std::copy_n(&plane(r, 0), plane.width, g.ptr<std::uint8_t>(r));
  checked_write(path, g);
}

SoftMap read_softmap(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw CorruptImage("cannot decode soft map " + path.string());
  SoftMap out(m.rows, m.cols);
  const double denom = m.depth() == CV_16U ? 65535.0 : 255.0;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const double v = m.depth() == CV_16U ? m.at<std::uint16_t>(r, c) : m.at<std::uint8_t>(r, c);
      out(r, c) = static_cast<float>(v / denom);
    }
  return out;
}

void write_softmap(const std::filesystem::path& path, const SoftMap& map) {
  cv::Mat m(map.height, map.width, CV_16UC1);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      const double p = std::clamp(static_cast<double>(map(r, c)), 0.0, 1.0);
      m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(std::lround(p * 65535.0));
    }
  checked_write(path, m);
}

}  // namespace fundus::io
