#pragma once

#include "meaformer/geometry/types.hpp"

namespace meaformer::geom {

/// Foreground pixels with at least one background 4-neighbour; pixels beyond
/// the image edge count as background.
Mask boundary_pixels(const Mask& mask);

/// Exact Euclidean distance from every pixel to the nearest boundary pixel
/// (separable lower-envelope transform). Throws on an empty mask.
Plane boundary_distance_map(const Mask& mask);

}  // namespace meaformer::geom
