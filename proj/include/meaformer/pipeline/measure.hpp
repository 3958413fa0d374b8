#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meaformer/data/phantom.hpp"
#include "meaformer/geometry/measures.hpp"
#include "meaformer/model/checkpoint.hpp"
#include "meaformer/model/meaformer.hpp"
#include "meaformer/pipeline/samples.hpp"

namespace meaformer::pipeline {

using geom::RecistEndpoints;
using geom::RecistMeasurement;

class MeasurementError : public std::runtime_error {
 public:
  enum class Kind { BadInput, DegenerateBox };
  MeasurementError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Which step-1 output defines the lesion box.
enum class BoxSource { Regression, Heatmap, Mean };

struct MeasurementReport {
  Box box;                  // predicted tight box (original pixels)
  Box loi;
  geom::AffineMap loi_map;  // original -> LOI view pixels
  Mask seg_mask;            // original-image grid
  RecistMeasurement segmentation, heatmap, regression, fused;
  geom::FusionResult fusion;
  /// Segmentation-source endpoints as measured in LOI view space.
  RecistEndpoints loi_segmentation;
  std::vector<std::string> flags;

  // Filled by score() when ground truth is available.
  std::optional<double> box_iou;
  std::optional<double> dice;
  /// Per source, in the order segmentation, heatmap, regression, fused.
  std::optional<std::array<geom::LengthErrors, 4>> errors;

  const RecistMeasurement& source(geom::MeasurementSource s) const;
};

/// Compares a report against a phantom's ground truth.
void score(MeasurementReport& report, const data::Phantom& truth);

/// Decodes step-2 outputs for one LOI view into a report. `seg`, `heatmaps`
/// and `keypoints` are the sample's planes [S*S], [4*S*S] and [4*2].
MeasurementReport decode_step2(const View& view, const Box& loi, int height, int width, double spacing,
                               std::span<const float> seg, std::span<const float> heatmaps,
                               std::span<const float> keypoints);

/// The two-step click-to-measurement path over a pair of read-only models.
/// Safe to call concurrently.
class Measurer {
 public:
  Measurer(const model::Checkpoint& step1, const model::Checkpoint& step2);
  Measurer(std::shared_ptr<const model::MeaFormer<float>> step1, std::shared_ptr<const model::MeaFormer<float>> step2);

  /// Step 1 on the whole image, then step 2 on the LOI of the predicted box.
  MeasurementReport measure(const Plane& image, Point click, double spacing_mm_per_px) const;

  /// Step 1 only: the predicted tight box in original pixels.
  Box predict_box(const Plane& image, Point click) const;

  /// Step 2 only, on a given LOI.
  MeasurementReport measure_loi(const Plane& image, Point click, const Box& loi, double spacing_mm_per_px) const;

  BoxSource box_source = BoxSource::Heatmap;

  const model::MeaFormer<float>& step1() const { return *step1_; }
  const model::MeaFormer<float>& step2() const { return *step2_; }

 private:
  std::shared_ptr<const model::MeaFormer<float>> step1_, step2_;
};

/// Loads a checkpoint into a fresh float model.
std::shared_ptr<model::MeaFormer<float>> load_model(const model::Checkpoint& ckpt);

/// Throws MeasurementError::BadInput unless the click lies inside the image
/// and the spacing is positive.
void check_measure_input(const Plane& image, Point click, double spacing_mm_per_px);

}  // namespace meaformer::pipeline
