#include "fundus/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fundus/errors.hpp"

namespace fundus {

void PostprocessParams::validate() const {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0,1)");
  if (opening_radius < 0) throw ConfigError("opening radius must be >= 0");
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
  if (reference_size <= 0) throw ConfigError("reference size must be positive");
}

int PostprocessParams::scaled_radius(int side) const {
  return static_cast<int>(std::lround(static_cast<double>(opening_radius) * side / reference_size));
}

Mask binarize(const SoftMap& soft, double threshold) {
  Mask out(soft.height, soft.width, 0);
  for (std::size_t i = 0; i < soft.size(); ++i) out.data[i] = soft.data[i] >= threshold;
  return out;
}

namespace {

/// Half-widths of the disk's horizontal chords, indexed by dy + radius.
std::vector<int> disk_chords(int radius) {
  std::vector<int> half(2 * radius + 1);
  for (int dy = -radius; dy <= radius; ++dy)
    half[dy + radius] = static_cast<int>(std::floor(std::sqrt(static_cast<double>(radius * radius - dy * dy))));
  return half;
}

/// Row-wise prefix counts of set pixels: prefix(r, c) = count in row r of columns [0, c).
std::vector<int> row_prefix(const Mask& m) {
  std::vector<int> p(static_cast<std::size_t>(m.height) * (m.width + 1), 0);
  for (int r = 0; r < m.height; ++r) {
    int* row = p.data() + static_cast<std::size_t>(r) * (m.width + 1);
    for (int c = 0; c < m.width; ++c) row[c + 1] = row[c] + (m(r, c) ? 1 : 0);
  }
  return p;
}

}  // namespace

Mask erode(const Mask& mask, int radius) {
  if (radius <= 0) return mask;
  const auto half = disk_chords(radius);
  const auto prefix = row_prefix(mask);
  const int w = mask.width;
  Mask out(mask.height, w, 0);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy) {
        const int rr = r + dy, hw = half[dy + radius];
        // Pixels outside the raster count as background.
        if (rr < 0 || rr >= mask.height || c - hw < 0 || c + hw >= w) {
          keep = false;
          break;
        }
        const int* row = prefix.data() + static_cast<std::size_t>(rr) * (w + 1);
        keep = row[c + hw + 1] - row[c - hw] == 2 * hw + 1;
      }
      out(r, c) = keep;
    }
  return out;
}

Mask dilate(const Mask& mask, int radius) {
  if (radius <= 0) return mask;
  const auto half = disk_chords(radius);
  const auto prefix = row_prefix(mask);
  const int w = mask.width;
  Mask out(mask.height, w, 0);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < w; ++c) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy) {
        const int rr = r + dy;
        if (rr < 0 || rr >= mask.height) continue;
        const int hw = half[dy + radius];
        const int lo = std::max(0, c - hw), hi = std::min(w - 1, c + hw);
        const int* row = prefix.data() + static_cast<std::size_t>(rr) * (w + 1);
        hit = row[hi + 1] - row[lo] > 0;
      }
      out(r, c) = hit;
    }
  return out;
}

Mask morphological_opening(const Mask& mask, int radius) { return dilate(erode(mask, radius), radius); }

namespace {

/// Component labels (0 = background, 1.. in raster order of first pixel) and their areas.
std::vector<int> label_components(const Mask& mask, int connectivity, std::vector<std::size_t>& areas) {
  static constexpr int kOffsets8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
  static constexpr int kOffsets4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
  std::vector<int> labels(mask.size(), 0);
  areas.assign(1, 0);
  std::deque<std::pair<int, int>> queue;
  int next = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask(r, c) || labels[static_cast<std::size_t>(r) * mask.width + c]) continue;
      ++next;
      areas.push_back(0);
      labels[static_cast<std::size_t>(r) * mask.width + c] = next;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        ++areas[next];
        const int n = connectivity == 8 ? 8 : 4;
        for (int k = 0; k < n; ++k) {
          const int yy = y + (connectivity == 8 ? kOffsets8[k][0] : kOffsets4[k][0]);
          const int xx = x + (connectivity == 8 ? kOffsets8[k][1] : kOffsets4[k][1]);
          if (!mask.contains(yy, xx) || !mask(yy, xx)) continue;
          auto& l = labels[static_cast<std::size_t>(yy) * mask.width + xx];
          if (l) continue;
          l = next;
          queue.emplace_back(yy, xx);
        }
      }
    }
  return labels;
}

}  // namespace

Mask largest_component(const Mask& mask, int connectivity) {
  std::vector<std::size_t> areas;
  const auto labels = label_components(mask, connectivity, areas);
  Mask out(mask.height, mask.width, 0);
  std::size_t best = 0;
  for (std::size_t l = 1; l < areas.size(); ++l)
    if (areas[l] > areas[best]) best = l;  // strict: earlier label wins ties
  if (best == 0) return out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels[i] == static_cast<int>(best);
  return out;
}

int count_components(const Mask& mask, int connectivity) {
  std::vector<std::size_t> areas;
  label_components(mask, connectivity, areas);
  return static_cast<int>(areas.size()) - 1;
}

Mask fill_holes(const Mask& mask) {
  // Flood the background from the border; whatever stays unreached is a hole.
  Mask reached(mask.height, mask.width, 0);
  std::deque<std::pair<int, int>> queue;
  auto seed = [&](int r, int c) {
    if (mask.contains(r, c) && !mask(r, c) && !reached(r, c)) {
      reached(r, c) = 1;
      queue.emplace_back(r, c);
    }
  };
  for (int r = 0; r < mask.height; ++r) {
    seed(r, 0);
    seed(r, mask.width - 1);
  }
  for (int c = 0; c < mask.width; ++c) {
    seed(0, c);
    seed(mask.height - 1, c);
  }
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    seed(r - 1, c);
    seed(r + 1, c);
    seed(r, c - 1);
    seed(r, c + 1);
  }
  Mask out(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = !reached.data[i];
  return out;
}

std::vector<Eigen::Vector2d> boundary_points(const Mask& mask) {
  std::vector<Eigen::Vector2d> pts;
  auto bg = [&](int r, int c) { return !mask.contains(r, c) || !mask(r, c); };
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) pts.emplace_back(c, r);
  return pts;
}

std::vector<Eigen::Vector2d> boundary_edge_points(const Mask& mask) {
  static constexpr int kDirs[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  std::vector<Eigen::Vector2d> pts;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask(r, c)) continue;
      for (const auto& d : kDirs) {
        const int rr = r + d[0], cc = c + d[1];
        if (!mask.contains(rr, cc) || !mask(rr, cc)) pts.emplace_back(c + 0.5 * d[1], r + 0.5 * d[0]);
      }
    }
  return pts;
}

Conic fit_ellipse_conic(const std::vector<Eigen::Vector2d>& points) {
  if (points.size() < 5) throw InsufficientBoundary("ellipse fit needs at least 5 boundary points");
  // Isotropic normalization keeps the problem well conditioned without changing its minimizer.
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double spread = 0;
  for (const auto& p : points) spread += (p - mean).norm();
  spread /= static_cast<double>(points.size());
  if (!(spread > 0)) throw DegenerateFit("boundary points coincide");
  const double s = 1.0 / spread;

  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd d1(n, 3), d2(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = (points[i].x() - mean.x()) * s, y = (points[i].y() - mean.y()) * s;
    d1.row(i) << x * x, x * y, y * y;
    d2.row(i) << x, y, 1.0;
  }
  // Numerically stable reduction of the constrained problem to a 3x3 eigenproblem.
  const Eigen::Matrix3d s1 = d1.transpose() * d1;
  const Eigen::Matrix3d s2 = d1.transpose() * d2;
  const Eigen::Matrix3d s3 = d2.transpose() * d2;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  if (!lu.isInvertible()) throw DegenerateFit("collinear boundary points");
  const Eigen::Matrix3d t = -lu.solve(s2.transpose());
  Eigen::Matrix3d m = s1 + s2 * t;
  Eigen::Matrix3d reduced;
  reduced.row(0) = m.row(2) / 2.0;
  reduced.row(1) = -m.row(1);
  reduced.row(2) = m.row(0) / 2.0;

  Eigen::EigenSolver<Eigen::Matrix3d> solver(reduced);
  Eigen::Vector3d best;
  bool found = false;
  double best_cond = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(solver.eigenvalues()[k].imag()) > 1e-9) continue;
    const Eigen::Vector3d v = solver.eigenvectors().col(k).real();
    const double cond = 4 * v[0] * v[2] - v[1] * v[1];
    if (cond > 0) {
      // Prefer the eigenvector with the smallest eigenvalue among admissible ones.
      const double ev = solver.eigenvalues()[k].real();
      if (!found || ev < best_cond) {
        best = v;
        best_cond = ev;
        found = true;
      }
    }
  }
  if (!found) throw DegenerateFit("no elliptical solution");
  const Eigen::Vector3d lin = t * best;

  // Undo the normalization: x_n = s (x - mx), y_n = s (y - my).
  const double a = best[0] * s * s, b = best[1] * s * s, c = best[2] * s * s;
  const double d = lin[0] * s, e = lin[1] * s, f = lin[2];
  Conic conic;
  conic << a, b, c, d - 2 * a * mean.x() - b * mean.y(), e - 2 * c * mean.y() - b * mean.x(),
      f + a * mean.x() * mean.x() + b * mean.x() * mean.y() + c * mean.y() * mean.y() - d * mean.x() - e * mean.y();
  const double norm = 4 * conic[0] * conic[2] - conic[1] * conic[1];
  if (!(norm > 0)) throw DegenerateFit("conic is not an ellipse");
  return conic / std::sqrt(norm);
}

Ellipse conic_to_ellipse(const Conic& k) {
  const double a = k[0], b = k[1], c = k[2], d = k[3], e = k[4], f = k[5];
  const double disc = b * b - 4 * a * c;
  if (!(disc < 0)) throw DegenerateFit("conic is not an ellipse");
  Eigen::Matrix2d q;
  q << 2 * a, b, b, 2 * c;
  const Eigen::Vector2d center = q.fullPivLu().solve(Eigen::Vector2d(-d, -e));
  const double f0 = a * center.x() * center.x() + b * center.x() * center.y() + c * center.y() * center.y() +
                    d * center.x() + e * center.y() + f;
  Eigen::Matrix2d quad;
  quad << a, b / 2, b / 2, c;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(quad);
  const double l_small = solver.eigenvalues()[0], l_large = solver.eigenvalues()[1];
  if (!(-f0 / l_small > 0) || !(-f0 / l_large > 0)) throw DegenerateFit("imaginary ellipse");
  Ellipse el;
  el.cx = center.x();
  el.cy = center.y();
  el.a = std::sqrt(-f0 / l_small);
  el.b = std::sqrt(-f0 / l_large);
  const Eigen::Vector2d major = solver.eigenvectors().col(0);
  el.theta = std::atan2(major.y(), major.x());
  return el.normalized();
}

Conic ellipse_to_conic(const Ellipse& e) {
  const double ct = std::cos(e.theta), st = std::sin(e.theta);
  const double ia = 1.0 / (e.a * e.a), ib = 1.0 / (e.b * e.b);
  const double a = ct * ct * ia + st * st * ib;
  const double b = 2 * ct * st * (ia - ib);
  const double c = st * st * ia + ct * ct * ib;
  const double d = -2 * a * e.cx - b * e.cy;
  const double ee = -2 * c * e.cy - b * e.cx;
  const double f = a * e.cx * e.cx + b * e.cx * e.cy + c * e.cy * e.cy - 1.0;
  Conic k;
  k << a, b, c, d, ee, f;
  return k / std::sqrt(4 * a * c - b * b);
}

double mean_algebraic_residual(const Conic& k, const std::vector<Eigen::Vector2d>& points) {
  double sum = 0;
  for (const auto& p : points) {
    const double x = p.x(), y = p.y();
    const double r = k[0] * x * x + k[1] * x * y + k[2] * y * y + k[3] * x + k[4] * y + k[5];
    sum += r * r;
  }
  return points.empty() ? 0.0 : sum / static_cast<double>(points.size());
}

Ellipse fit_ellipse(const Mask& mask) {
  return conic_to_ellipse(fit_ellipse_conic(boundary_edge_points(fill_holes(mask))));
}

PostprocessResult postprocess_pair(const SoftMap& od_soft, const SoftMap& oc_soft, const PostprocessParams& params) {
  params.validate();
  PostprocessResult res;
  auto refine = [&](const SoftMap& soft, const char* name) {
    const int radius = params.scaled_radius(std::min(soft.height, soft.width));
    Mask m = binarize(soft, params.threshold);
    Mask opened = morphological_opening(m, radius);
    Mask largest = largest_component(opened, params.connectivity);
    if (count_ones(largest) == 0) {
      res.warnings.push_back(std::string(name) + ": empty after refinement");
    }
    return largest;
  };
  res.od = refine(od_soft, "od");
  res.oc = refine(oc_soft, "oc");

  if (params.fit_ellipse_od && count_ones(res.od) > 0) {
    try {
      const Ellipse e = fit_ellipse(res.od);
      Mask fitted = rasterize_ellipse(e, res.od.height, res.od.width);
      if (count_ones(fitted) == 0) {
        res.warnings.push_back("od: ellipse fit produced an empty mask; kept component mask");
      } else {
        res.od = std::move(fitted);
      }
    } catch (const Error& err) {
      res.warnings.push_back(std::string("od: ellipse fit failed (") + err.what() + "); kept component mask");
    }
  }
  if (params.enforce_cup_in_disc)
    for (std::size_t i = 0; i < res.oc.size(); ++i) res.oc.data[i] &= res.od.data[i];
  return res;
}

}  // namespace fundus
