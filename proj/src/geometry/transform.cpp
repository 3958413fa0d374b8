#include "meaformer/geometry/transform.hpp"

#include <algorithm>
#include <cmath>

#include "meaformer/geometry/recist.hpp"

namespace meaformer::geom {

RecistEndpoints AffineMap::forward_endpoints(const RecistEndpoints& e) const {
  return RecistEndpoints{forward(e.long_a), forward(e.long_b), forward(e.short_a), forward(e.short_b)}.canonical();
}

RecistEndpoints AffineMap::inverse_endpoints(const RecistEndpoints& e) const {
  return RecistEndpoints{inverse(e.long_a), inverse(e.long_b), inverse(e.short_a), inverse(e.short_b)}.canonical();
}

Box loi_from_box(const Box& box, int image_height, int image_width) {
  if (!box.valid()) throw GeometryError("LOI requires a box with positive extent");
  const double side = 2.0 * std::max(box.width(), box.height());
  const Point c = box.center();
  auto place = [side](double center, double extent) -> std::pair<double, double> {
    if (side > extent) return {0.0, extent};
    const double lo = std::clamp(center - side / 2.0, 0.0, extent - side);
    return {lo, lo + side};
  };
  const auto [x0, x1] = place(c.x, image_width - 1.0);
  const auto [y0, y1] = place(c.y, image_height - 1.0);
  return {{x0, y0}, {x1, y1}};
}

double sample_bilinear(const Plane& plane, double x, double y) {
  x = std::clamp(x, 0.0, plane.width - 1.0);
  y = std::clamp(y, 0.0, plane.height - 1.0);
  const int x0 = std::min(static_cast<int>(x), plane.width - 1);
  const int y0 = std::min(static_cast<int>(y), plane.height - 1);
  const int x1 = std::min(x0 + 1, plane.width - 1);
  const int y1 = std::min(y0 + 1, plane.height - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * plane.at(y0, x0) + fx * plane.at(y0, x1)) +
         fy * ((1 - fx) * plane.at(y1, x0) + fx * plane.at(y1, x1));
}

namespace {

AffineMap crop_map(const Box& loi, int out_size) {
  if (!loi.valid()) throw GeometryError("crop region must have positive extent");
  if (out_size < 2) throw GeometryError("crop output must be at least 2x2");
  AffineMap m;
  m.scale_x = (out_size - 1.0) / loi.width();
  m.scale_y = (out_size - 1.0) / loi.height();
  m.offset_x = -loi.top_left.x * m.scale_x;
  m.offset_y = -loi.top_left.y * m.scale_y;
  return m;
}

}  // namespace

CropResult crop_resize(const Plane& image, const Box& loi, int out_size) {
  CropResult out{Plane(out_size, out_size), crop_map(loi, out_size)};
  for (int r = 0; r < out_size; ++r)
    for (int c = 0; c < out_size; ++c) {
      const Point src = out.map.inverse({static_cast<double>(c), static_cast<double>(r)});
      out.image.at(r, c) = sample_bilinear(image, src.x, src.y);
    }
  return out;
}

Mask crop_resize_mask(const Mask& mask, const Box& loi, int out_size) {
  const AffineMap map = crop_map(loi, out_size);
  Mask out(out_size, out_size);
  for (int r = 0; r < out_size; ++r)
    for (int c = 0; c < out_size; ++c) {
      const Point src = map.inverse({static_cast<double>(c), static_cast<double>(r)});
      out.at(r, c) = sample_mask(mask, src.x, src.y) >= 0.5 ? 1 : 0;
    }
  return out;
}

Mask uncrop_mask(const Mask& crop_mask, const AffineMap& map, int height, int width) {
  Mask out(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Point p = map.forward({static_cast<double>(c), static_cast<double>(r)});
      out.at(r, c) = sample_mask(crop_mask, p.x, p.y) >= 0.5 ? 1 : 0;
    }
  return out;
}

Box full_image_box(int height, int width) { return {{0.0, 0.0}, {width - 1.0, height - 1.0}}; }

ClickChannels click_channels(Point click, int height, int width, double sigma) {
  if (!(click.x >= 0.0 && click.y >= 0.0 && click.x <= width - 1.0 && click.y <= height - 1.0))
    throw GeometryError("click outside the image");
  ClickChannels out{Plane(height, width), Plane(height, width)};
  const double diag = std::hypot(width - 1.0, height - 1.0);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double dx = c - click.x, dy = r - click.y;
      const double d2 = dx * dx + dy * dy;
      out.click.at(r, c) = std::exp(-d2 * inv);
      out.distance.at(r, c) = diag > 0 ? std::sqrt(d2) / diag : 0.0;
    }
  return out;
}

}  // namespace meaformer::geom
