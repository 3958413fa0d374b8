#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "meaformer/geometry/types.hpp"

namespace meaformer::data {

using geom::Box;
using geom::Mask;
using geom::Plane;
using geom::Point;
using geom::RecistEndpoints;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One synthetic lesion with exact ground truth. `recist` and `box` are
/// always derived from `mask`.
struct Phantom {
  Plane image;  // values in [0, 1], exactly representable as f32
  Mask mask;
  RecistEndpoints recist;
  Box box;
  double spacing_mm_per_px = 0.8;
  uint64_t seed = 0;

  int height() const { return image.height; }
  int width() const { return image.width; }
  friend bool operator==(const Phantom&, const Phantom&) = default;
};

struct PhantomConfig {
  int height = 64;
  int width = 64;
  double spacing_mm_per_px = 0.8;
  double min_area_fraction = 0.02;
  double max_area_fraction = 0.30;
  double min_aspect = 0.45;  // minor / major semi-axis
  int min_harmonics = 3;
  int max_harmonics = 6;
  /// Upper bound on the summed radial perturbation, as a fraction of the
  /// minor semi-axis. Zero gives exact ellipses.
  double max_perturbation = 0.25;
  double min_contrast = 0.15;
  int margin_px = 2;  // lesion keeps this distance from the image border
  int max_retries = 200;

  void validate() const;
};

/// Shape parameters of a drawn lesion, kept for tests and diagnostics.
struct LesionShape {
  Point center;
  double major = 0.0, minor = 0.0;  // semi-axes, px
  double angle = 0.0;               // major-axis orientation, rad
  std::vector<int> orders;          // harmonic orders
  std::vector<double> amplitudes;   // px
  std::vector<double> phases;

  /// Boundary radius along direction `theta` (image frame).
  double radius(double theta) const;
  bool contains(Point p) const;
};

/// Rasterizes the pixel centres inside `shape`.
Mask rasterize(const LesionShape& shape, int height, int width);

/// Draws a lesion shape; pure function of (seed, config). Does not check the
/// area constraint (generate_phantom does).
LesionShape draw_lesion_shape(uint64_t seed, const PhantomConfig& config);

/// Mean intensity inside the mask minus mean outside.
double lesion_contrast(const Plane& image, const Mask& mask);

/// Synthetic phantom: perturbed ellipse over smoothed-noise background.
/// Draws violating the area or contrast constraints are redrawn from a
/// derived stream; throws DataError after config.max_retries.
Phantom generate_phantom(uint64_t seed, const PhantomConfig& config = {});

/// Phantom from an explicit shape (no constraint checks beyond a non-empty
/// mask).
Phantom render_phantom(const LesionShape& shape, uint64_t seed, const PhantomConfig& config = {});

/// A click drawn uniformly over pixel centres of the mask eroded by a 5x5
/// square (2 px); when erosion empties the mask, the foreground pixel
/// nearest the centroid.
Point sample_click(const Mask& mask, uint64_t seed);

/// Erosion by a (2r+1) x (2r+1) square; pixels outside the image count as
/// background.
Mask erode(const Mask& mask, int radius);

/// Filled quadrilateral long_a -> short_a -> long_b -> short_b: pixel centres
/// inside or on the boundary. Throws geom::GeometryError when the corners
/// are collinear.
Mask quad_pseudo_mask(const RecistEndpoints& recist, int height, int width);

}  // namespace meaformer::data
