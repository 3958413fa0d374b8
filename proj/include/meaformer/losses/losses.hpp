#pragma once

#include <vector>

#include "meaformer/numcore/tensor.hpp"

namespace meaformer::loss {

using nc::Tensor;

/// Eq. weights for seg, heatmap, regression, cons1, cons2.
struct LossWeights {
  double seg = 1.0;
  double heatmap = 10.0;
  double regression = 1.0;
  double cons1 = 0.01;
  double cons2 = 0.01;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kProbClip = 1e-6;
inline constexpr double kIouEps = 1e-6;

/// Mean binary cross-entropy; probabilities clipped to [1e-6, 1 - 1e-6].
/// S and gt are [N,1,H,W].
template <typename T> Tensor<T> bce_loss(const Tensor<T>& s, const Tensor<T>& gt);

/// Soft IoU loss 1 - (I + eps) / (U + eps), averaged over the batch.
template <typename T> Tensor<T> iou_loss(const Tensor<T>& s, const Tensor<T>& gt);

template <typename T> Tensor<T> seg_loss(const Tensor<T>& s, const Tensor<T>& gt);

/// Mean squared error over every pixel and channel.
template <typename T> Tensor<T> heatmap_loss(const Tensor<T>& m, const Tensor<T>& gt);

/// Mean absolute error between two same-shape tensors.
template <typename T> Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Sum over decoder layers of the per-layer mean L1 error; each layer holds
/// [N,Nq,2] normalized coordinates.
template <typename T>
Tensor<T> regression_loss(const std::vector<Tensor<T>>& layers, const Tensor<T>& gt);

/// Samples planes[N,K,H,W] at points[N,K,2] (normalized (x, y), point k reads
/// plane k) with bilinear interpolation and clamp-to-edge. Returns [N,K];
/// differentiable w.r.t. both planes and points.
template <typename T> Tensor<T> bilinear_sample(const Tensor<T>& planes, const Tensor<T>& points);

/// mean_i |M_i(x_i, y_i) - 1| over the final-layer keypoints.
template <typename T> Tensor<T> cons1_loss(const Tensor<T>& m, const Tensor<T>& keypoints);

/// Per-sample boundary distance maps of S >= 0.5, treated as constants.
template <typename T>
struct DistanceMaps {
  Tensor<T> maps;          // [N,1,H,W]; zeros where invalid
  std::vector<bool> valid; // false when the binarized mask is empty
};

template <typename T> DistanceMaps<T> distance_maps(const Tensor<T>& s);

template <typename T>
struct Cons2Result {
  Tensor<T> loss;
  int skipped = 0;  // samples dropped by the empty-mask rule
};

/// mean_i |D(x_i, y_i)| over samples with a non-empty mask; every keypoint
/// of a sample reads the same map. Gradient reaches the keypoints only.
template <typename T>
Cons2Result<T> cons2_loss(const DistanceMaps<T>& d, const Tensor<T>& keypoints);

template <typename T> Cons2Result<T> cons2_loss(const Tensor<T>& s, const Tensor<T>& keypoints);

/// Network outputs entering the objective.
template <typename T>
struct Prediction {
  Tensor<T> seg;                   // S, [N,1,H,W], after the sigmoid
  Tensor<T> heatmaps;              // M, [N,K,H,W]
  std::vector<Tensor<T>> keypoints;  // per decoder layer, [N,Nq,2]
};

template <typename T>
struct Supervision {
  Tensor<T> mask;       // [N,1,H,W]
  Tensor<T> heatmaps;   // [N,K,H,W]
  Tensor<T> keypoints;  // [N,Nq,2]
};

template <typename T>
struct LossTerms {
  Tensor<T> seg, heatmap, regression, cons1, cons2;  // cons terms undefined at step 1
  Tensor<T> total;
  int cons2_skipped = 0;
};

/// Weighted sum of the defined terms.
template <typename T>
Tensor<T> total_loss(const LossTerms<T>& terms, const LossWeights& w);

/// All terms for one batch. With `consistency` false (step 1) the cons terms
/// are left undefined. `fixed_distance` overrides the maps computed from S.
template <typename T>
LossTerms<T> compute_losses(const Prediction<T>& pred, const Supervision<T>& sup, const LossWeights& w,
                            bool consistency, const DistanceMaps<T>* fixed_distance = nullptr);

}  // namespace meaformer::loss
