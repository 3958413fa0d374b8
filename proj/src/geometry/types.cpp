#include "meaformer/geometry/types.hpp"

#include <cmath>
#include <numeric>

namespace meaformer::geom {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

int64_t Mask::count() const {
  return std::accumulate(values.begin(), values.end(), int64_t{0},
                         [](int64_t acc, uint8_t v) { return acc + (v ? 1 : 0); });
}

Mask threshold(const Plane& plane, double level) {
  Mask m(plane.height, plane.width);
  for (size_t i = 0; i < plane.values.size(); ++i) m.values[i] = plane.values[i] >= level ? 1 : 0;
  return m;
}

void canonical_order(Point& a, Point& b) {
  if (b.x < a.x || (b.x == a.x && b.y < a.y)) std::swap(a, b);
}

RecistEndpoints RecistEndpoints::from_list(const std::vector<Point>& pts) {
  if (pts.size() != 4) throw GeometryError("RECIST endpoints need exactly four points");
  return {pts[0], pts[1], pts[2], pts[3]};
}

RecistEndpoints RecistEndpoints::canonical() const {
  RecistEndpoints r = *this;
  canonical_order(r.long_a, r.long_b);
  canonical_order(r.short_a, r.short_b);
  return r;
}

std::string to_string(MeasurementSource source) {
  switch (source) {
    case MeasurementSource::Segmentation: return "segmentation";
    case MeasurementSource::Heatmap: return "heatmap";
    case MeasurementSource::Regression: return "regression";
    case MeasurementSource::Fused: return "fused";
  }
  return "unknown";
}

RecistMeasurement RecistMeasurement::from_endpoints(const RecistEndpoints& endpoints, MeasurementSource source,
                                                    double spacing_mm_per_px) {
  RecistMeasurement m;
  m.endpoints = endpoints;
  m.long_px = endpoints.long_length();
  m.short_px = endpoints.short_length();
  m.long_mm = m.long_px * spacing_mm_per_px;
  m.short_mm = m.short_px * spacing_mm_per_px;
  m.source = source;
  m.spacing_mm_per_px = spacing_mm_per_px;
  m.degenerate = !(m.long_px > 0.0) || !(m.short_px > 0.0);
  return m;
}

}  // namespace meaformer::geom
