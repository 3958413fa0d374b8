#include "meaformer/pipeline/measure.hpp"

#include <algorithm>
#include <cmath>

#include "meaformer/geometry/heatmap.hpp"
#include "meaformer/geometry/recist.hpp"

namespace meaformer::pipeline {

using geom::MeasurementSource;

const RecistMeasurement& MeasurementReport::source(MeasurementSource s) const {
  switch (s) {
    case MeasurementSource::Segmentation: return segmentation;
    case MeasurementSource::Heatmap: return heatmap;
    case MeasurementSource::Regression: return regression;
    case MeasurementSource::Fused: return fused;
  }
  throw std::invalid_argument("unknown measurement source");
}

void score(MeasurementReport& report, const data::Phantom& truth) {
  report.box_iou = geom::box_iou(report.box, truth.box);
  report.dice = geom::dice(report.seg_mask, truth.mask).value;
  std::array<geom::LengthErrors, 4> e;
  const RecistMeasurement* m[4] = {&report.segmentation, &report.heatmap, &report.regression, &report.fused};
  for (size_t i = 0; i < 4; ++i) {
    e[i] = geom::length_error_mm(m[i]->endpoints, truth.recist, truth.spacing_mm_per_px);
    if (i == 3) {  // fused lengths are the averaged values, not the rounded endpoints
      e[i].long_mm = std::abs(m[i]->long_px - truth.recist.long_length()) * truth.spacing_mm_per_px;
      e[i].short_mm = std::abs(m[i]->short_px - truth.recist.short_length()) * truth.spacing_mm_per_px;
    }
  }
  report.errors = e;
}

namespace {

RecistMeasurement degenerate_measurement(MeasurementSource s, double spacing) {
  return RecistMeasurement::from_endpoints(RecistEndpoints{}, s, spacing);
}

}  // namespace

MeasurementReport decode_step2(const View& view, const Box& loi, int height, int width, double spacing,
                               std::span<const float> seg, std::span<const float> heatmaps,
                               std::span<const float> keypoints) {
  const int s = view.size;
  const size_t plane = size_t(s) * s;
  if (seg.size() != plane || heatmaps.size() != 4 * plane || keypoints.size() != 8)
    throw nc::ContractError("decode_step2: unexpected output sizes");
  MeasurementReport r;
  r.loi = loi;
  r.loi_map = view.map;

  Mask crop(s, s);
  for (size_t i = 0; i < plane; ++i) crop.values[i] = seg[i] >= 0.5f;
  r.seg_mask = geom::uncrop_mask(crop, view.map, height, width);

  r.segmentation = degenerate_measurement(MeasurementSource::Segmentation, spacing);
  if (crop.empty()) {
    r.flags.push_back("segmentation_empty");
  } else {
    try {
      r.loi_segmentation = geom::recist_from_mask(crop);
      r.segmentation = RecistMeasurement::from_endpoints(view.map.inverse_endpoints(r.loi_segmentation),
                                                         MeasurementSource::Segmentation, spacing);
    } catch (const geom::GeometryError&) {
      r.flags.push_back("segmentation_degenerate");
    }
  }

  std::vector<Point> peaks;
  bool flat = false;
  for (int k = 0; k < 4; ++k) {
    Plane p(s, s);
    std::copy(heatmaps.begin() + std::ptrdiff_t(k * plane), heatmaps.begin() + std::ptrdiff_t((k + 1) * plane),
              p.values.begin());
    const auto d = geom::decode_heatmap(p);
    flat = flat || d.degenerate;
    peaks.push_back(d.location);
  }
  if (flat) r.flags.push_back("heatmap_degenerate");
  r.heatmap = RecistMeasurement::from_endpoints(view.map.inverse_endpoints(RecistEndpoints::from_list(peaks)),
                                                MeasurementSource::Heatmap, spacing);

  std::vector<Point> kp;
  for (int k = 0; k < 4; ++k) kp.push_back({denormalize(keypoints[2 * k], s), denormalize(keypoints[2 * k + 1], s)});
  r.regression = RecistMeasurement::from_endpoints(view.map.inverse_endpoints(RecistEndpoints::from_list(kp)),
                                                   MeasurementSource::Regression, spacing);

  r.fusion = geom::fuse_diameters(r.segmentation, r.heatmap, r.regression);
  r.fused = r.fusion.fused;
  if (r.fusion.fallback) r.flags.push_back("fusion_fallback");
  return r;
}

std::shared_ptr<model::MeaFormer<float>> load_model(const model::Checkpoint& ckpt) {
  auto m = std::make_shared<model::MeaFormer<float>>(ckpt.config, ckpt.seed);
  model::load_state(*m, ckpt);
  return m;
}

void check_measure_input(const Plane& image, Point click, double spacing_mm_per_px) {
  using Kind = MeasurementError::Kind;
  if (image.height < 2 || image.width < 2 || image.values.size() != size_t(image.height) * image.width)
    throw MeasurementError(Kind::BadInput, "image must be a non-empty 2D plane");
  for (double v : image.values)
    if (!std::isfinite(v)) throw MeasurementError(Kind::BadInput, "image contains non-finite values");
  if (!(std::isfinite(click.x) && std::isfinite(click.y) && click.x >= 0.0 && click.y >= 0.0 &&
        click.x <= image.width - 1.0 && click.y <= image.height - 1.0))
    throw MeasurementError(Kind::BadInput, "click (" + std::to_string(click.x) + ", " + std::to_string(click.y) +
                                               ") is outside the image");
  if (!(spacing_mm_per_px > 0.0) || !std::isfinite(spacing_mm_per_px))
    throw MeasurementError(Kind::BadInput, "spacing must be positive");
}

Measurer::Measurer(const model::Checkpoint& step1, const model::Checkpoint& step2)
    : Measurer(load_model(step1), load_model(step2)) {}

Measurer::Measurer(std::shared_ptr<const model::MeaFormer<float>> step1,
                   std::shared_ptr<const model::MeaFormer<float>> step2)
    : step1_(std::move(step1)), step2_(std::move(step2)) {
  if (!step1_ || !step2_) throw std::invalid_argument("Measurer needs two models");
  if (step1_->config().queries != 2 || step1_->config().head_out_channels != 3)
    throw std::invalid_argument("step-1 model must have 2 queries and 3 head outputs");
  if (step2_->config().queries != 4 || step2_->config().head_out_channels != 5)
    throw std::invalid_argument("step-2 model must have 4 queries and 5 head outputs");
}

Box Measurer::predict_box(const Plane& image, Point click) const {
  const int s = step1_->config().input_size;
  const View view = make_view(image, click, geom::full_image_box(image.height, image.width), s);
  nc::NoGradGuard no_grad;
  const auto out = step1_->forward(input_tensor({&view}), nc::RunContext{false, nullptr});

  const auto kp = out.keypoints.back().data();
  std::array<Point, 2> reg{Point{denormalize(kp[0], s), denormalize(kp[1], s)},
                           Point{denormalize(kp[2], s), denormalize(kp[3], s)}};
  std::array<Point, 2> heat;
  const auto hm = out.heatmaps.data();
  for (int k = 0; k < 2; ++k) {
    Plane p(s, s);
    std::copy(hm.begin() + std::ptrdiff_t(size_t(k) * p.values.size()),
              hm.begin() + std::ptrdiff_t(size_t(k + 1) * p.values.size()), p.values.begin());
    heat[size_t(k)] = geom::decode_heatmap(p).location;
  }
  std::array<Point, 2> corners = reg;
  if (box_source == BoxSource::Heatmap) corners = heat;
  if (box_source == BoxSource::Mean)
    for (size_t k = 0; k < 2; ++k) corners[k] = (reg[k] + heat[k]) * 0.5;

  Point a = view.map.inverse(corners[0]), b = view.map.inverse(corners[1]);
  auto clamp_x = [&](double x) { return std::clamp(x, 0.0, image.width - 1.0); };
  auto clamp_y = [&](double y) { return std::clamp(y, 0.0, image.height - 1.0); };
  return {{clamp_x(std::min(a.x, b.x)), clamp_y(std::min(a.y, b.y))},
          {clamp_x(std::max(a.x, b.x)), clamp_y(std::max(a.y, b.y))}};
}

MeasurementReport Measurer::measure_loi(const Plane& image, Point click, const Box& loi,
                                        double spacing_mm_per_px) const {
  check_measure_input(image, click, spacing_mm_per_px);
  const int s = step2_->config().input_size;
  const View view = make_view(image, click, loi, s);
  nc::NoGradGuard no_grad;
  const auto out = step2_->forward(input_tensor({&view}), nc::RunContext{false, nullptr});
  const auto seg = out.seg.data(), hm = out.heatmaps.data(), kp = out.keypoints.back().data();
  return decode_step2(view, loi, image.height, image.width, spacing_mm_per_px,
                      std::span<const float>(seg.data(), seg.size()), std::span<const float>(hm.data(), hm.size()),
                      std::span<const float>(kp.data(), kp.size()));
}

MeasurementReport Measurer::measure(const Plane& image, Point click, double spacing_mm_per_px) const {
  check_measure_input(image, click, spacing_mm_per_px);
  const Box box = predict_box(image, click);
  if (!box.valid())
    throw MeasurementError(MeasurementError::Kind::DegenerateBox,
                           "step-1 box has zero area (" + std::to_string(box.width()) + " x " +
                               std::to_string(box.height()) + " px)");
  const Box loi = geom::loi_from_box(box, image.height, image.width);
  MeasurementReport r = measure_loi(image, click, loi, spacing_mm_per_px);
  r.box = box;
  if (click.x < loi.top_left.x || click.x > loi.bottom_right.x || click.y < loi.top_left.y ||
      click.y > loi.bottom_right.y)
    r.flags.push_back("click_outside_loi");
  if (r.loi.width() < 2.0 * std::max(box.width(), box.height()) - 1e-9 ||
      r.loi.height() < 2.0 * std::max(box.width(), box.height()) - 1e-9)
    r.flags.push_back("loi_clipped");
  return r;
}

}  // namespace meaformer::pipeline
