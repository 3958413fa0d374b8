#pragma once

#include "meaformer/geometry/types.hpp"

namespace meaformer::geom {

inline constexpr double kDefaultHeatmapSigma = 5.0;

struct RenderedHeatmap {
  Plane plane;
  bool center_outside = false;
};

/// Gaussian exp(-|p - c|^2 / (2 sigma^2)) centred on the rounded `center`, so
/// the peak pixel holds exactly 1. Off-image centres still render their tail.
RenderedHeatmap make_gt_heatmap(Point center, double sigma, int height, int width);

struct DecodedPeak {
  Point location;
  bool degenerate = false;  // flat plane, no unique maximum
};

/// Arg-max (first in row-major order) refined by one Newton step on the local
/// 3x3 quadratic; the offset is clamped to +-0.5 px per axis.
DecodedPeak decode_heatmap(const Plane& plane);

}  // namespace meaformer::geom
