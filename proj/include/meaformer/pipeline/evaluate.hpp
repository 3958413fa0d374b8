#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meaformer/data/phantom.hpp"
#include "meaformer/pipeline/measure.hpp"

namespace meaformer::pipeline {

/// Produces a report for one case; may throw MeasurementError.
using MeasureFn = std::function<MeasurementReport(const data::Phantom&, Point click)>;

MeasureFn two_step(const Measurer& m);
/// Step 2 on the LOI of the ground-truth box (isolates the measurement network).
MeasureFn step2_on_truth(const Measurer& m);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
  size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct CaseResult {
  size_t index = 0;
  Point click;
  bool failed = false;
  std::string error;
  double dice = 0.0;
  double box_iou = 0.0;
  std::array<geom::LengthErrors, 4> errors{};  // segmentation, heatmap, regression, fused
  std::vector<std::string> flags;
};

struct Summary {
  std::vector<CaseResult> cases;
  size_t failures = 0;
  MeanStd dice;  // failed cases count as Dice 0
  std::array<MeanStd, 4> long_mm, short_mm;  // over successful cases
  double box_accuracy = 0.0;  // fraction with IoU > 0.5; failures count as misses
};

/// Clicks are drawn per case from `seed`; cases run on `threads` workers
/// (0 = hardware concurrency). Results do not depend on the thread count.
Summary evaluate(const std::vector<data::Phantom>& cases, const MeasureFn& measure, uint64_t seed, int threads = 0);

/// Human-readable table with published reference values in the header.
std::string format_summary(const Summary& s);
/// One JSON object per line: a "summary" row then one row per case.
std::string summary_rows(const Summary& s);

struct Spacing3d {
  double x = 1.0, y = 1.0, z = 1.0;
};

/// Segments one slice around a click; may throw.
using SliceFn = std::function<Mask(const Plane& slice, Point click)>;

struct VolumeResult {
  std::vector<Mask> masks;
  std::vector<bool> flagged;  // no click, or the slice measurement failed
  double volume_mm3 = 0.0;
  std::optional<double> dice;
};

/// Runs `segment` on every slice with a click and stacks the masks. Slices
/// without a click, and failures, contribute an empty plane and are flagged.
VolumeResult segment_volume(const std::vector<Plane>& slices, const std::vector<std::optional<Point>>& clicks,
                            const Spacing3d& spacing, const SliceFn& segment,
                            const std::vector<Mask>* truth = nullptr);

SliceFn slice_segmenter(const Measurer& m, double spacing_mm_per_px);

/// Dice over stacked masks of identical shape.
double dice_3d(const std::vector<Mask>& a, const std::vector<Mask>& b);

}  // namespace meaformer::pipeline
