#pragma once

#include <cstdint>
#include <optional>

#include "meaformer/data/phantom.hpp"

namespace meaformer::data {

/// Training augmentations. Each op fires with its probability; a range of
/// zero width makes the op a no-op.
struct AugmentationConfig {
  double scale_min = 0.9, scale_max = 1.1;
  double scale_p = 0.5;
  double jitter_px = 4.0;  // translation, each axis uniform in [-j, j]
  double jitter_p = 0.5;
  double rotation_deg = 15.0;  // uniform in [-r, r]
  double rotation_p = 0.5;
  double brightness = 0.1;  // additive, uniform in [-b, b]
  double contrast = 0.15;   // gain 1 + uniform in [-c, c] about the image mean
  double photometric_p = 0.5;
  double blur_sigma_min = 0.3, blur_sigma_max = 1.0;
  double blur_p = 0.3;
  int max_retries = 20;

  void validate() const;
  /// Every probability zero.
  static AugmentationConfig identity();
};

struct Augmented {
  Phantom phantom;
  Point click;
};

/// Similarity warp about the image centre:
/// dst = centre + scale * R(angle) * (src - centre) + (tx, ty).
struct Warp {
  double scale = 1.0;
  double angle_deg = 0.0;
  double tx = 0.0, ty = 0.0;

  Point forward(Point p, int height, int width) const;
  Point inverse(Point p, int height, int width) const;
};

/// Applies `warp` to image, mask, box, endpoints and click (see augment).
/// Returns nullopt when the warped lesion touches the image border.
std::optional<Augmented> apply_warp(const Phantom& phantom, Point click, const Warp& warp, uint64_t seed);

/// Applies one geometric warp (scale, jitter, rotation about the image
/// centre) to image, mask, box and click, then photometric ops to the image
/// only. Without rotation the endpoints are mapped through the warp; with
/// rotation they are re-derived from the warped mask. Box is the tight box
/// of the warped mask. A click that leaves the lesion is redrawn with
/// sample_click. Warps that clip the lesion at the border are redrawn;
/// after max_retries the geometric part is skipped.
Augmented augment(const Phantom& phantom, Point click, const AugmentationConfig& cfg, uint64_t seed);

/// Separable Gaussian blur, clamp-to-edge, kernel radius ceil(3 sigma).
Plane gaussian_blur(const Plane& plane, double sigma);

}  // namespace meaformer::data
