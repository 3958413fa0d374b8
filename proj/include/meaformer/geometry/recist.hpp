#pragma once

#include <utility>
#include <vector>

#include "meaformer/geometry/types.hpp"

namespace meaformer::geom {

/// Largest 8-connected foreground component (first in row-major order on ties).
Mask largest_component(const Mask& mask);

/// Convex hull of integer lattice points, counter-clockwise, collinear points
/// dropped (monotone chain).
std::vector<Point> convex_hull(std::vector<Point> points);

/// Farthest pair of a convex polygon by rotating calipers.
std::pair<Point, Point> farthest_pair(const std::vector<Point>& hull);

/// Bilinear sample of a 0/1 mask, zero outside the image.
double sample_mask(const Mask& mask, double x, double y);

inline constexpr double kChordSweepStep = 0.5;

/// RECIST axes of the largest component: the long axis is the farthest pair
/// of boundary-pixel centres; the short axis is the longest chord
/// perpendicular to it, measured between the outermost crossings of the 0.5
/// level of the bilinearly interpolated mask, sampled every 0.5 px along the
/// long axis.
RecistEndpoints recist_from_mask(const Mask& mask);

}  // namespace meaformer::geom
