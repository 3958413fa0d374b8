#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "meaformer/geometry/distance.hpp"
#include "meaformer/geometry/recist.hpp"
#include "meaformer/geometry/types.hpp"
#include "meaformer/numcore/rng.hpp"

namespace meaformer::oracle {

using geom::Mask;
using geom::Plane;
using geom::Point;

inline std::vector<Point> boundary_points(const Mask& mask) {
  const Mask b = geom::boundary_pixels(mask);
  std::vector<Point> pts;
  for (int r = 0; r < b.height; ++r)
    for (int c = 0; c < b.width; ++c)
      if (b.at(r, c)) pts.push_back({static_cast<double>(c), static_cast<double>(r)});
  return pts;
}

/// O(N^2): distance from every pixel to every boundary pixel.
inline Plane brute_distance_map(const Mask& mask) {
  const auto sites = boundary_points(mask);
  Plane out(mask.height, mask.width);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (const Point& s : sites) best = std::min(best, std::hypot(c - s.x, r - s.y));
      out.at(r, c) = best;
    }
  return out;
}

/// Largest distance over all pairs of boundary pixels of the largest component.
inline double brute_long_axis(const Mask& mask) {
  const auto pts = boundary_points(geom::largest_component(mask));
  double best = 0.0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, geom::distance(pts[i], pts[j]));
  return best;
}

/// Sub-pixel boundary points: the 0.5-level crossings of the bilinearly
/// interpolated mask along every grid line (midpoints of fg/bg pixel edges).
inline std::vector<Point> boundary_crossings(const Mask& mask) {
  std::vector<Point> pts;
  auto v = [&](int r, int c) { return mask.inside(r, c) ? mask.at(r, c) : 0; };
  for (int r = -1; r <= mask.height; ++r)
    for (int c = -1; c <= mask.width; ++c) {
      if (v(r, c) != v(r, c + 1)) pts.push_back({c + 0.5, static_cast<double>(r)});
      if (v(r, c) != v(r + 1, c)) pts.push_back({static_cast<double>(c), r + 0.5});
    }
  return pts;
}

/// Longest pair of boundary crossings whose direction is within `tol_deg`
/// of the normal to the long axis (a_long, b_long).
inline double brute_short_axis(const Mask& mask, Point a_long, Point b_long, double tol_deg = 1.5) {
  const auto pts = boundary_crossings(geom::largest_component(mask));
  const double lx = b_long.x - a_long.x, ly = b_long.y - a_long.y;
  const double ll = std::hypot(lx, ly);
  const double max_cos = std::sin(tol_deg * std::numbers::pi / 180.0);
  double best = 0.0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[j].x - pts[i].x, dy = pts[j].y - pts[i].y;
      const double d = std::hypot(dx, dy);
      if (d <= best) continue;
      if (std::abs(dx * lx + dy * ly) / (d * ll) <= max_cos) best = d;
    }
  return best;
}

inline Mask filled_ellipse(int h, int w, double cx, double cy, double a, double b, double angle = 0.0) {
  Mask m(h, w);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dx = c - cx, dy = r - cy;
      const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) m.at(r, c) = 1;
    }
  return m;
}

/// Random blob: rotated ellipse with a low-frequency radial perturbation.
inline Mask random_blob(int size, nc::Rng& rng) {
  const double cx = rng.uniform(0.35, 0.65) * (size - 1), cy = rng.uniform(0.35, 0.65) * (size - 1);
  const double a = rng.uniform(0.12, 0.28) * size, b = a * rng.uniform(0.4, 1.0);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const int k = static_cast<int>(rng.uniform_int(3, 6));
  const double amp = rng.uniform(0.0, 0.2), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  Mask m(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double dx = c - cx, dy = r - cy;
      const double u = dx * std::cos(theta) + dy * std::sin(theta), v = -dx * std::sin(theta) + dy * std::cos(theta);
      const double phi = std::atan2(v / b, u / a);
      const double rho = std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
      if (rho <= 1.0 + amp * std::sin(k * phi + phase)) m.at(r, c) = 1;
    }
  return m;
}

}  // namespace meaformer::oracle
