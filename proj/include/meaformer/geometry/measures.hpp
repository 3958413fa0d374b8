#pragma once

#include <optional>
#include <vector>

#include "meaformer/geometry/types.hpp"

namespace meaformer::geom {

struct FusionResult {
  RecistMeasurement fused;
  MeasurementSource long_candidate = MeasurementSource::Heatmap;
  MeasurementSource short_candidate = MeasurementSource::Heatmap;
  bool fallback = false;  // a degenerate input forced the segmentation result
};

/// Per axis: the heatmap or regression length closest to the segmentation
/// length (ties go to the heatmap) is averaged with it; the segmentation
/// endpoints are rescaled about their midpoint to the fused length.
FusionResult fuse_diameters(const RecistMeasurement& seg, const RecistMeasurement& heat,
                            const RecistMeasurement& reg);

struct DiceResult {
  double value = 0.0;
  bool both_empty = false;
};

/// 2|A n B| / (|A| + |B|); both empty is defined as 1 and flagged.
DiceResult dice(const Mask& pred, const Mask& gt);

double box_iou(const Box& a, const Box& b);

struct LengthErrors {
  double long_mm = 0.0;
  double short_mm = 0.0;
};

LengthErrors length_error_mm(const RecistEndpoints& pred, const RecistEndpoints& gt, double spacing_mm_per_px);

/// Tight bounding box of the foreground pixel centres; nullopt when empty.
std::optional<Box> mask_bounding_box(const Mask& mask);

/// Outer contour of the largest component (Moore-neighbour trace), as pixel
/// centres in clockwise order.
std::vector<Point> trace_contour(const Mask& mask);

}  // namespace meaformer::geom
