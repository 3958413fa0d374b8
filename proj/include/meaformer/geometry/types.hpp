#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace meaformer::geom {

/// Pixel-space point: x = column, y = row, origin at the top-left pixel centre.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(Point a, double s) { return {a.x * s, a.y * s}; }
  friend bool operator==(const Point&, const Point&) = default;
};

double distance(Point a, Point b);

struct Box {
  Point top_left;
  Point bottom_right;

  double width() const { return bottom_right.x - top_left.x; }
  double height() const { return bottom_right.y - top_left.y; }
  Point center() const { return (top_left + bottom_right) * 0.5; }
  bool valid() const { return top_left.x < bottom_right.x && top_left.y < bottom_right.y; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Real-valued H x W raster, row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}
  double& at(int row, int col) { return values[static_cast<size_t>(row) * width + col]; }
  double at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Binary H x W raster (0 or 1), row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;

  Mask() = default;
  Mask(int h, int w, uint8_t fill = 0) : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}
  uint8_t& at(int row, int col) { return values[static_cast<size_t>(row) * width + col]; }
  uint8_t at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
  bool inside(int row, int col) const { return row >= 0 && row < height && col >= 0 && col < width; }
  int64_t count() const;
  bool empty() const { return count() == 0; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

Mask threshold(const Plane& plane, double level);

/// RECIST endpoints; each axis is ordered with the smaller-x endpoint first
/// (smaller y breaks ties).
struct RecistEndpoints {
  Point long_a, long_b, short_a, short_b;

  double long_length() const { return distance(long_a, long_b); }
  double short_length() const { return distance(short_a, short_b); }
  /// [long_a, long_b, short_a, short_b], the heatmap channel order.
  std::vector<Point> as_list() const { return {long_a, long_b, short_a, short_b}; }
  static RecistEndpoints from_list(const std::vector<Point>& pts);
  RecistEndpoints canonical() const;
  friend bool operator==(const RecistEndpoints&, const RecistEndpoints&) = default;
};

/// Orders two endpoints lexicographically by (x, y).
void canonical_order(Point& a, Point& b);

enum class MeasurementSource { Segmentation, Heatmap, Regression, Fused };

std::string to_string(MeasurementSource source);

struct RecistMeasurement {
  RecistEndpoints endpoints;
  double long_px = 0.0;
  double short_px = 0.0;
  double long_mm = 0.0;
  double short_mm = 0.0;
  MeasurementSource source = MeasurementSource::Segmentation;
  double spacing_mm_per_px = 1.0;
  bool degenerate = false;

  static RecistMeasurement from_endpoints(const RecistEndpoints& endpoints, MeasurementSource source,
                                          double spacing_mm_per_px);
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace meaformer::geom
