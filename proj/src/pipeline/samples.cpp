#include "meaformer/pipeline/samples.hpp"

#include <algorithm>

namespace meaformer::pipeline {

View make_view(const Plane& image, Point click, const Box& region, int size) {
  auto crop = geom::crop_resize(image, region, size);
  View v;
  v.image = std::move(crop.image);
  v.map = crop.map;
  // a click outside the region is pinned to the nearest view pixel
  Point c = v.map.forward(click);
  c.x = std::clamp(c.x, 0.0, size - 1.0);
  c.y = std::clamp(c.y, 0.0, size - 1.0);
  v.click = geom::click_channels(c, size, size);
  v.size = size;
  return v;
}

Example step1_example(const data::Phantom& phantom, Point click, int size) {
  const Box full = geom::full_image_box(phantom.height(), phantom.width());
  Example e;
  e.view = make_view(phantom.image, click, full, size);
  e.mask = geom::crop_resize_mask(phantom.mask, full, size);
  e.keypoints = {e.view.map.forward(phantom.box.top_left), e.view.map.forward(phantom.box.bottom_right)};
  return e;
}

Example step2_example(const data::Phantom& phantom, Point click, const Box& loi, int size) {
  Example e;
  e.view = make_view(phantom.image, click, loi, size);
  e.mask = geom::crop_resize_mask(phantom.mask, loi, size);
  for (const Point& p : phantom.recist.as_list()) e.keypoints.push_back(e.view.map.forward(p));
  return e;
}

nc::Tensor<float> input_tensor(const std::vector<const View*>& views) {
  if (views.empty()) throw nc::ContractError("input_tensor: no views");
  const int s = views.front()->size;
  const size_t plane = size_t(s) * s;
  std::vector<float> values(views.size() * 3 * plane);
  for (size_t n = 0; n < views.size(); ++n) {
    const View& v = *views[n];
    if (v.size != s) throw nc::ContractError("input_tensor: views differ in size");
    float* dst = values.data() + n * 3 * plane;
    std::copy(v.image.values.begin(), v.image.values.end(), dst);
    std::copy(v.click.click.values.begin(), v.click.click.values.end(), dst + plane);
    std::copy(v.click.distance.values.begin(), v.click.distance.values.end(), dst + 2 * plane);
  }
  return nc::Tensor<float>({int64_t(views.size()), 3, s, s}, std::move(values));
}

Batch make_batch(const std::vector<Example>& examples, double heatmap_sigma) {
  if (examples.empty()) throw nc::ContractError("make_batch: no examples");
  const int s = examples.front().view.size;
  const size_t k = examples.front().keypoints.size(), plane = size_t(s) * s, n = examples.size();
  std::vector<const View*> views;
  std::vector<float> mask(n * plane), heat(n * k * plane), kp(n * k * 2);
  for (size_t i = 0; i < n; ++i) {
    const Example& e = examples[i];
    if (e.keypoints.size() != k) throw nc::ContractError("make_batch: keypoint counts differ");
    views.push_back(&e.view);
    std::copy(e.mask.values.begin(), e.mask.values.end(), mask.begin() + std::ptrdiff_t(i * plane));
    for (size_t j = 0; j < k; ++j) {
      const Point p = e.keypoints[j];
      const auto hm = geom::make_gt_heatmap(p, heatmap_sigma, s, s);
      std::copy(hm.plane.values.begin(), hm.plane.values.end(), heat.begin() + std::ptrdiff_t((i * k + j) * plane));
      kp[(i * k + j) * 2] = float(normalize(p.x, s));
      kp[(i * k + j) * 2 + 1] = float(normalize(p.y, s));
    }
  }
  Batch b;
  b.input = input_tensor(views);
  b.supervision.mask = nc::Tensor<float>({int64_t(n), 1, s, s}, std::move(mask));
  b.supervision.heatmaps = nc::Tensor<float>({int64_t(n), int64_t(k), s, s}, std::move(heat));
  b.supervision.keypoints = nc::Tensor<float>({int64_t(n), int64_t(k), 2}, std::move(kp));
  return b;
}

}  // namespace meaformer::pipeline
