#include "meaformer/geometry/distance.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace meaformer::geom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of a sampled function along one line. Only
// finite samples contribute parabolas.
void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
    };
    // z[0] is -inf, so the scan always stops at k == 0
    double s = intersect(v[static_cast<size_t>(k)]);
    while (s <= z[static_cast<size_t>(k)]) {
      --k;
      s = intersect(v[static_cast<size_t>(k)]);
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    d.assign(static_cast<size_t>(n), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(j) + 1] < q) ++j;
    const int p = v[static_cast<size_t>(j)];
    d[static_cast<size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<size_t>(p)];
  }
}

}  // namespace

Mask boundary_pixels(const Mask& mask) {
  Mask out(mask.height, mask.width);
  auto bg = [&](int r, int c) { return !mask.inside(r, c) || mask.at(r, c) == 0; };
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) out.at(r, c) = 1;
  return out;
}

Plane boundary_distance_map(const Mask& mask) {
  if (mask.empty()) throw GeometryError("distance map of an empty mask");
  const Mask sites = boundary_pixels(mask);
  const int h = mask.height, w = mask.width;
  Plane sq(h, w);
  std::vector<double> f, d;

  f.resize(static_cast<size_t>(h));
  d.resize(static_cast<size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[static_cast<size_t>(r)] = sites.at(r, c) ? 0.0 : kInf;
    squared_dt_1d(f, d);
    for (int r = 0; r < h; ++r) sq.at(r, c) = d[static_cast<size_t>(r)];
  }
  f.resize(static_cast<size_t>(w));
  d.resize(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[static_cast<size_t>(c)] = sq.at(r, c);
    squared_dt_1d(f, d);
    for (int c = 0; c < w; ++c) sq.at(r, c) = std::sqrt(d[static_cast<size_t>(c)]);
  }
  return sq;
}

}  // namespace meaformer::geom
