#include "meaformer/geometry/heatmap.hpp"

#include <algorithm>
#include <cmath>

namespace meaformer::geom {

RenderedHeatmap make_gt_heatmap(Point center, double sigma, int height, int width) {
  if (!(sigma > 0.0)) throw GeometryError("heatmap sigma must be positive");
  RenderedHeatmap out{Plane(height, width), false};
  const double cx = std::round(center.x);
  const double cy = std::round(center.y);
  out.center_outside = cx < 0 || cy < 0 || cx > width - 1 || cy > height - 1;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double dx = c - cx, dy = r - cy;
      out.plane.at(r, c) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  return out;
}

DecodedPeak decode_heatmap(const Plane& plane) {
  if (plane.values.empty()) throw GeometryError("cannot decode an empty heatmap");
  const auto [lo, hi] = std::minmax_element(plane.values.begin(), plane.values.end());
  if (*lo == *hi)
    return {{static_cast<double>((plane.width - 1) / 2), static_cast<double>((plane.height - 1) / 2)}, true};

  const auto best = static_cast<int>(hi - plane.values.begin());
  const int r = best / plane.width, c = best % plane.width;
  const double f = plane.at(r, c);
  const bool has_x = c > 0 && c < plane.width - 1;
  const bool has_y = r > 0 && r < plane.height - 1;

  double gx = 0, gy = 0, hxx = 0, hyy = 0, hxy = 0;
  if (has_x) {
    gx = 0.5 * (plane.at(r, c + 1) - plane.at(r, c - 1));
    hxx = plane.at(r, c + 1) - 2 * f + plane.at(r, c - 1);
  }
  if (has_y) {
    gy = 0.5 * (plane.at(r + 1, c) - plane.at(r - 1, c));
    hyy = plane.at(r + 1, c) - 2 * f + plane.at(r - 1, c);
  }
  if (has_x && has_y)
    hxy = 0.25 * (plane.at(r + 1, c + 1) - plane.at(r - 1, c + 1) - plane.at(r + 1, c - 1) +
                  plane.at(r - 1, c - 1));

  double dx = 0.0, dy = 0.0;
  const double det = hxx * hyy - hxy * hxy;
  if (has_x && has_y && hxx < 0 && det > 0) {
    dx = -(hyy * gx - hxy * gy) / det;
    dy = -(hxx * gy - hxy * gx) / det;
  } else {
    if (has_x && hxx < 0) dx = -gx / hxx;
    if (has_y && hyy < 0) dy = -gy / hyy;
  }
  dx = std::clamp(dx, -0.5, 0.5);
  dy = std::clamp(dy, -0.5, 0.5);
  return {{c + dx, r + dy}, false};
}

}  // namespace meaformer::geom
