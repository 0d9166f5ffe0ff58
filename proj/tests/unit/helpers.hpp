#pragma once

#include <cmath>
#include <cstdint>

#include "fundus/ellipse.hpp"
#include "fundus/image.hpp"
#include "fundus/random.hpp"

namespace fundus::testing {

inline Mask disk(int h, int w, double cx, double cy, double r) {
  return rasterize_ellipse(Ellipse{cx, cy, r, r, 0}, h, w);
}

inline Mask random_mask(int h, int w, double p, Rng& rng) {
  std::bernoulli_distribution bit(p);
  Mask m(h, w, 0);
  for (auto& v : m.data) v = bit(rng);
  return m;
}

/// Two-level soft map from a binary mask.
inline SoftMap soften(const Mask& m, float inside = 0.95f, float outside = 0.05f) {
  SoftMap s(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) s.data[i] = m.data[i] ? inside : outside;
  return s;
}

inline std::size_t overlap(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.data[i] && b.data[i];
  return n;
}

inline bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] && !b.data[i]) return false;
  return true;
}

}  // namespace fundus::testing
