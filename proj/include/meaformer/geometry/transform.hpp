#pragma once

#include "meaformer/geometry/types.hpp"

namespace meaformer::geom {

/// Axis-aligned affine map from source-image to crop coordinates:
/// crop = scale * source + offset, per axis.
struct AffineMap {
  double scale_x = 1.0, scale_y = 1.0;
  double offset_x = 0.0, offset_y = 0.0;

  Point forward(Point source) const { return {scale_x * source.x + offset_x, scale_y * source.y + offset_y}; }
  Point inverse(Point crop) const { return {(crop.x - offset_x) / scale_x, (crop.y - offset_y) / scale_y}; }
  RecistEndpoints forward_endpoints(const RecistEndpoints& e) const;
  RecistEndpoints inverse_endpoints(const RecistEndpoints& e) const;
};

/// Square lesion-of-interest: side = 2 * max(box width, box height), centred
/// on the box, shifted inside [0, W-1] x [0, H-1]. An axis whose side exceeds
/// the image is clipped to the full extent.
Box loi_from_box(const Box& box, int image_height, int image_width);

/// Bilinear sample with clamp-to-edge.
double sample_bilinear(const Plane& plane, double x, double y);

struct CropResult {
  Plane image;
  AffineMap map;  // source -> crop pixel coordinates
};

/// Resamples the LOI onto an out_size x out_size grid whose corner pixel
/// centres coincide with the LOI corners.
CropResult crop_resize(const Plane& image, const Box& loi, int out_size);

/// Same sampling grid applied to a mask (bilinear, thresholded at 0.5).
Mask crop_resize_mask(const Mask& mask, const Box& loi, int out_size);

/// Warps a crop-space mask back onto the source grid through `map`.
Mask uncrop_mask(const Mask& crop_mask, const AffineMap& map, int height, int width);

Box full_image_box(int height, int width);

inline constexpr double kClickSigma = 3.0;

struct ClickChannels {
  Plane click;     // Gaussian with peak 1 at the click
  Plane distance;  // Euclidean distance to the click over the image diagonal
};

ClickChannels click_channels(Point click, int height, int width, double sigma = kClickSigma);

}  // namespace meaformer::geom
