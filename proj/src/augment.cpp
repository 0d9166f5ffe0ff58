#include "fundus/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "fundus/errors.hpp"
#include "sampling.hpp"

namespace fundus {

namespace {
constexpr double kTransferEps = 1e-3;
constexpr double kStdFloor = 1.0;
}  // namespace

void AugmentConfig::validate() const {
  if (max_shift < 0 || max_rotation < 0 || pca_scale < 0)
    throw ConfigError("augmentation ranges must be non-negative");
  for (int c = 0; c < 3; ++c)
    if (color_mean_prior[c].std < 0 || color_std_prior[c].std < 0) throw ConfigError("prior std must be >= 0");
}

GeometricTransform sample_geometric(const AugmentConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  GeometricTransform t;
  t.shift_x = cfg.max_shift * unit(rng);
  t.shift_y = cfg.max_shift * unit(rng);
  t.angle_degrees = cfg.max_rotation * unit(rng);
  return t;
}

FundusSample apply_geometric(const FundusSample& sample, const GeometricTransform& t) {
  if (t.shift_x == 0 && t.shift_y == 0 && t.angle_degrees == 0) return sample;
  const int h = sample.image.height, w = sample.image.width;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double a = t.angle_degrees * std::numbers::pi / 180.0;
  const double cos_a = std::cos(a), sin_a = std::sin(a);
  // Inverse map: destination pixel -> source location.
  auto source_of = [&](int r, int c) {
    const double dx = c - cx - t.shift_x, dy = r - cy - t.shift_y;
    return std::array<double, 2>{cos_a * dx + sin_a * dy + cx, -sin_a * dx + cos_a * dy + cy};
  };

  FundusSample out = sample;
  const auto fill = detail::channel_means(sample.image);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto [x, y] = source_of(r, c);
      const bool inside = detail::inside_footprint(x, y, h, w);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = inside ? detail::bilinear(
                                      [&](int rr, int cc) { return static_cast<double>(sample.image(rr, cc, ch)); }, x,
                                      y, h, w)
                                : fill[ch];
        out.image(r, c, ch) = detail::to_u8(v);
      }
    }

  auto warp_mask = [&](const Mask& m) {
    Mask o(m.height, m.width, 0);
    for (int r = 0; r < m.height; ++r)
      for (int c = 0; c < m.width; ++c) {
        const auto [x, y] = source_of(r, c);
        const int sc = static_cast<int>(std::floor(x + 0.5)), sr = static_cast<int>(std::floor(y + 0.5));
        if (m.contains(sr, sc)) o(r, c) = m(sr, sc);
      }
    return o;
  };
  if (sample.od_mask) out.od_mask = warp_mask(*sample.od_mask);
  if (sample.oc_mask) out.oc_mask = warp_mask(*sample.oc_mask);
  return out;
}

FundusSample random_geometric(const FundusSample& sample, const AugmentConfig& cfg, Rng& rng) {
  return apply_geometric(sample, sample_geometric(cfg, rng));
}

ColorStats channel_stats(const RgbImage& image) {
  ColorStats s;
  const double n = std::max<std::size_t>(image.pixel_count(), 1);
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
      const double v = image.data[i * 3 + ch];
      sum += v;
      sq += v * v;
    }
    s.mean[ch] = sum / n;
    s.std[ch] = std::sqrt(std::max(0.0, sq / n - s.mean[ch] * s.mean[ch]));
  }
  return s;
}

std::vector<double> color_transfer_raw(const RgbImage& image, const ColorStats& target) {
  const ColorStats src = channel_stats(image);
  std::vector<double> out(image.data.size());
  for (std::size_t i = 0; i < image.pixel_count(); ++i)
    for (int ch = 0; ch < 3; ++ch) {
      const double x = image.data[i * 3 + ch];
      out[i * 3 + ch] = (x - src.mean[ch]) / std::max(src.std[ch], kTransferEps) * target.std[ch] + target.mean[ch];
    }
  return out;
}

RgbImage color_transfer(const RgbImage& image, const ColorStats& target) {
  const auto raw = color_transfer_raw(image, target);
  RgbImage out(image.height, image.width);
  std::ranges::transform(raw, out.data.begin(), detail::to_u8);
  return out;
}

ColorStats sample_target_stats(const AugmentConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ColorStats s;
  for (int ch = 0; ch < 3; ++ch) {
    const auto& mp = cfg.color_mean_prior[ch];
    const auto& sp = cfg.color_std_prior[ch];
    s.mean[ch] = mp.mean + mp.std * normal(rng);
    s.std[ch] = std::max(kStdFloor, sp.mean + sp.std * normal(rng));
  }
  return s;
}

PcaBasis fit_pca_basis(const Eigen::MatrixX3d& pixels) {
  if (pixels.rows() < 3) throw DegenerateSample("PCA basis needs at least 3 pixels");
  const Eigen::RowVector3d mean = pixels.colwise().mean();
  const Eigen::MatrixX3d centered = pixels.rowwise() - mean;
  const Eigen::Matrix3d cov = centered.transpose() * centered / static_cast<double>(pixels.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);

  PcaBasis basis;
  for (int i = 0; i < 3; ++i) {
    // Solver orders ascending; store descending.
    basis.eigenvalues[i] = std::max(0.0, solver.eigenvalues()[2 - i]);
    Eigen::Vector3d v = solver.eigenvectors().col(2 - i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.eigenvectors.col(i) = v;
  }
  return basis;
}

Eigen::MatrixX3d sample_pixels(std::span<const RgbImage> images, std::size_t max_pixels, Rng& rng) {
  std::size_t total = 0;
  for (const auto& img : images) total += img.pixel_count();
  if (total <= max_pixels) {
    Eigen::MatrixX3d out(static_cast<Eigen::Index>(total), 3);
    Eigen::Index row = 0;
    for (const auto& img : images)
      for (std::size_t i = 0; i < img.pixel_count(); ++i, ++row)
        for (int ch = 0; ch < 3; ++ch) out(row, ch) = img.data[i * 3 + ch];
    return out;
  }
  std::vector<std::size_t> offsets;
  offsets.reserve(images.size() + 1);
  offsets.push_back(0);
  for (const auto& img : images) offsets.push_back(offsets.back() + img.pixel_count());
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  Eigen::MatrixX3d out(static_cast<Eigen::Index>(max_pixels), 3);
  for (std::size_t k = 0; k < max_pixels; ++k) {
    const std::size_t flat = pick(rng);
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    const auto& img = images[static_cast<std::size_t>(it - offsets.begin())];
    const std::size_t i = flat - *it;
    for (int ch = 0; ch < 3; ++ch) out(static_cast<Eigen::Index>(k), ch) = img.data[i * 3 + ch];
  }
  return out;
}

Eigen::Vector3d sample_pca_offset(const PcaBasis& basis, double pca_scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d alpha;
  for (int i = 0; i < 3; ++i) alpha[i] = pca_scale * normal(rng);
  return basis.eigenvectors * alpha.cwiseProduct(basis.eigenvalues);
}

RgbImage pca_color_jitter(const RgbImage& image, const PcaBasis& basis, const AugmentConfig& cfg, Rng& rng) {
  const Eigen::Vector3d offset = sample_pca_offset(basis, cfg.pca_scale, rng);
  if (offset.isZero(0.0)) return image;
  RgbImage out(image.height, image.width);
  for (std::size_t i = 0; i < image.pixel_count(); ++i)
    for (int ch = 0; ch < 3; ++ch) out.data[i * 3 + ch] = detail::to_u8(image.data[i * 3 + ch] + offset[ch]);
  return out;
}

void set_priors_from_data(AugmentConfig& cfg, std::span<const RgbImage> images) {
  if (images.empty()) return;
  std::array<double, 3> mean{}, std{};
  for (const auto& img : images) {
    const auto s = channel_stats(img);
    for (int ch = 0; ch < 3; ++ch) {
      mean[ch] += s.mean[ch];
      std[ch] += s.std[ch];
    }
  }
  for (int ch = 0; ch < 3; ++ch) {
    cfg.color_mean_prior[ch] = {mean[ch] / images.size(), 15.0};
    cfg.color_std_prior[ch] = {std[ch] / images.size(), 5.0};
  }
}

FundusSample augment_sample(const FundusSample& sample, const AugmentConfig& cfg, const PcaBasis& basis, Rng& rng) {
  FundusSample out = cfg.enable_geometric ? random_geometric(sample, cfg, rng) : sample;
  if (cfg.enable_color_transfer) out.image = color_transfer(out.image, sample_target_stats(cfg, rng));
  if (cfg.enable_pca) out.image = pca_color_jitter(out.image, basis, cfg, rng);
  return out;
}

}  // namespace fundus
