#include "meaformer/geometry/measures.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "meaformer/geometry/recist.hpp"

namespace meaformer::geom {

namespace {

void rescale_about_midpoint(Point& a, Point& b, double length) {
  const Point mid = (a + b) * 0.5;
  const double current = distance(a, b);
  if (!(current > 0.0)) return;
  const double f = length / current;
  a = mid + (a - mid) * f;
  b = mid + (b - mid) * f;
}

}  // namespace

FusionResult fuse_diameters(const RecistMeasurement& seg, const RecistMeasurement& heat,
                            const RecistMeasurement& reg) {
  FusionResult out;
  out.fused = seg;
  out.fused.source = MeasurementSource::Fused;
  if (seg.degenerate || heat.degenerate || reg.degenerate) {
    out.fallback = true;
    return out;
  }
  auto pick = [](double ref, double h, double r, MeasurementSource& which) {
    if (std::abs(h - ref) <= std::abs(r - ref)) {
      which = MeasurementSource::Heatmap;
      return h;
    }
    which = MeasurementSource::Regression;
    return r;
  };
  const double long_px = 0.5 * (seg.long_px + pick(seg.long_px, heat.long_px, reg.long_px, out.long_candidate));
  const double short_px =
      0.5 * (seg.short_px + pick(seg.short_px, heat.short_px, reg.short_px, out.short_candidate));

  RecistEndpoints e = seg.endpoints;
  rescale_about_midpoint(e.long_a, e.long_b, long_px);
  rescale_about_midpoint(e.short_a, e.short_b, short_px);
  out.fused = RecistMeasurement::from_endpoints(e, MeasurementSource::Fused, seg.spacing_mm_per_px);
  // keep the averaged lengths exactly; endpoint rounding must not leak in
  out.fused.long_px = long_px;
  out.fused.short_px = short_px;
  out.fused.long_mm = long_px * seg.spacing_mm_per_px;
  out.fused.short_mm = short_px * seg.spacing_mm_per_px;
  return out;
}

DiceResult dice(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw GeometryError("dice: mask shapes differ");
  int64_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return {1.0, true};
  return {2.0 * static_cast<double>(both) / static_cast<double>(a + b), false};
}

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.bottom_right.x, b.bottom_right.x) - std::max(a.top_left.x, b.top_left.x));
  const double iy = std::max(0.0, std::min(a.bottom_right.y, b.bottom_right.y) - std::max(a.top_left.y, b.top_left.y));
  const double inter = ix * iy;
  const double uni = std::max(0.0, a.width()) * std::max(0.0, a.height()) +
                     std::max(0.0, b.width()) * std::max(0.0, b.height()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

LengthErrors length_error_mm(const RecistEndpoints& pred, const RecistEndpoints& gt, double spacing_mm_per_px) {
  return {std::abs(pred.long_length() - gt.long_length()) * spacing_mm_per_px,
          std::abs(pred.short_length() - gt.short_length()) * spacing_mm_per_px};
}

std::optional<Box> mask_bounding_box(const Mask& mask) {
  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return std::nullopt;
  return Box{{static_cast<double>(c0), static_cast<double>(r0)}, {static_cast<double>(c1), static_cast<double>(r1)}};
}

std::vector<Point> trace_contour(const Mask& mask) {
  if (mask.empty()) return {};
  const Mask comp = largest_component(mask);
  // clockwise on screen (y down), starting west
  static constexpr std::array<std::array<int, 2>, 8> kDirs{
      {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};
  auto dir_of = [](int dx, int dy) {
    for (int i = 0; i < 8; ++i)
      if (kDirs[i][0] == dx && kDirs[i][1] == dy) return i;
    return 0;
  };
  auto fg = [&](int x, int y) { return comp.inside(y, x) && comp.at(y, x); };

  int sx = -1, sy = -1;
  for (int r = 0; r < comp.height && sx < 0; ++r)
    for (int c = 0; c < comp.width; ++c)
      if (comp.at(r, c)) {
        sx = c;
        sy = r;
        break;
      }

  std::vector<Point> contour{{static_cast<double>(sx), static_cast<double>(sy)}};
  int cx = sx, cy = sy, back = 0;  // the west neighbour of the first pixel is background
  const int start_back = back;
  const size_t limit = 4 * comp.values.size() + 8;
  while (contour.size() < limit) {
    bool moved = false;
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      const int nx = cx + kDirs[d][0], ny = cy + kDirs[d][1];
      if (!fg(nx, ny)) continue;
      const int pd = (back + k - 1) % 8;
      const int bx = cx + kDirs[pd][0], by = cy + kDirs[pd][1];
      cx = nx;
      cy = ny;
      back = dir_of(bx - cx, by - cy);
      moved = true;
      break;
    }
    if (!moved) break;  // isolated pixel
    if (cx == sx && cy == sy && back == start_back) break;
    contour.push_back({static_cast<double>(cx), static_cast<double>(cy)});
  }
  return contour;
}

}  // namespace meaformer::geom
