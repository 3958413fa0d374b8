#pragma once

#include <vector>

#include "meaformer/data/phantom.hpp"
#include "meaformer/geometry/heatmap.hpp"
#include "meaformer/geometry/transform.hpp"
#include "meaformer/losses/losses.hpp"

namespace meaformer::pipeline {

using geom::Box;
using geom::Mask;
using geom::Plane;
using geom::Point;

/// An image region resampled onto the network grid, with its click channels.
struct View {
  Plane image;
  geom::ClickChannels click;
  geom::AffineMap map;  // source -> view pixels
  int size = 0;
};

/// Crops `region` of `image` to size x size and encodes `click` (source
/// coordinates) in view space; a click outside the region is clamped to it.
View make_view(const Plane& image, Point click, const Box& region, int size);

/// A view plus its supervision: mask and keypoints in view pixels.
struct Example {
  View view;
  Mask mask;
  std::vector<Point> keypoints;
};

/// Step 1: whole image, keypoints are the tight box corners.
Example step1_example(const data::Phantom& phantom, Point click, int size);

/// Step 2: the given LOI, keypoints are the RECIST endpoints in heatmap order.
Example step2_example(const data::Phantom& phantom, Point click, const Box& loi, int size);

/// [N,3,S,S] network input: image, click Gaussian, click distance.
nc::Tensor<float> input_tensor(const std::vector<const View*>& views);

struct Batch {
  nc::Tensor<float> input;
  loss::Supervision<float> supervision;
};

/// Stacks examples; keypoints normalized by (S - 1), heatmaps rendered at
/// the rounded keypoints.
Batch make_batch(const std::vector<Example>& examples, double heatmap_sigma = geom::kDefaultHeatmapSigma);

/// View pixels -> normalized [0,1] and back.
inline double normalize(double px, int size) { return px / double(size - 1); }
inline double denormalize(double v, int size) { return v * double(size - 1); }

}  // namespace meaformer::pipeline
