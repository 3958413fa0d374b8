#include "meaformer/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "meaformer/geometry/distance.hpp"
#include "meaformer/numcore/ops.hpp"

namespace meaformer::loss {

using nc::ContractError;
using nc::Node;
using nc::Shape;

void LossWeights::validate() const {
  for (double v : {seg, heatmap, regression, cons1, cons2})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) throw ContractError(std::string(what) + ": shape mismatch");
}

template <typename T>
void require_nchw(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) throw ContractError(std::string(what) + ": expected [N,C,H,W]");
}

}  // namespace

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& s, const Tensor<T>& gt) {
  require_same_shape(s, gt, "bce_loss");
  const auto sv = s.data();
  const auto gv = gt.data();
  const size_t n = sv.size();
  if (n == 0) throw ContractError("bce_loss: empty input");
  const T lo = T(kProbClip), hi = T(1) - T(kProbClip);
  T total = 0;
  // 0: clipped low, 1: inside, 2: clipped high
  auto region = std::make_shared<std::vector<uint8_t>>(n);
  nc::BranchTrace* trace = nc::branch_trace();
  for (size_t i = 0; i < n; ++i) {
    const int64_t actual = sv[i] < lo ? 0 : (sv[i] > hi ? 2 : 1);
    (*region)[i] = static_cast<uint8_t>(trace ? trace->branch(actual) : actual);
    const T p = (*region)[i] == 0 ? lo : ((*region)[i] == 2 ? hi : sv[i]);
    total -= gv[i] * std::log(p) + (T(1) - gv[i]) * std::log(T(1) - p);
  }
  return nc::make_result<T>(Shape{}, {total / T(n)}, {s, gt}, [lo, hi, n, region](Node<T>& self) {
    const auto& sv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    const T g = self.grad[0] / T(n);
    if (T* ds = self.parent_grad(0))
      for (size_t i = 0; i < n; ++i) {
        if ((*region)[i] != 1) continue;
        ds[i] += g * (-gv[i] / sv[i] + (T(1) - gv[i]) / (T(1) - sv[i]));
      }
    if (T* dg = self.parent_grad(1))
      for (size_t i = 0; i < n; ++i) {
        const T p = (*region)[i] == 0 ? lo : ((*region)[i] == 2 ? hi : sv[i]);
        dg[i] += g * (-std::log(p) + std::log(T(1) - p));
      }
  });
}

template <typename T>
Tensor<T> iou_loss(const Tensor<T>& s, const Tensor<T>& gt) {
  require_same_shape(s, gt, "iou_loss");
  require_nchw(s, "iou_loss");
  const int64_t batch = s.dim(0);
  const size_t per = static_cast<size_t>(s.numel() / batch);
  const auto sv = s.data();
  const auto gv = gt.data();
  const T eps = T(kIouEps);
  std::vector<T> inter(static_cast<size_t>(batch)), uni(static_cast<size_t>(batch));
  T total = 0;
  for (int64_t b = 0; b < batch; ++b) {
    T i_sum = 0, s_sum = 0, g_sum = 0;
    for (size_t k = b * per; k < (b + 1) * per; ++k) {
      i_sum += sv[k] * gv[k];
      s_sum += sv[k];
      g_sum += gv[k];
    }
    inter[b] = i_sum;
    uni[b] = s_sum + g_sum - i_sum;
    total += T(1) - (i_sum + eps) / (uni[b] + eps);
  }
  return nc::make_result<T>(Shape{}, {total / T(batch)}, {s, gt},
                            [inter, uni, eps, batch, per](Node<T>& self) {
    const auto& sv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    T* ds = self.parent_grad(0);
    T* dg = self.parent_grad(1);
    const T g = self.grad[0] / T(batch);
    for (int64_t b = 0; b < batch; ++b) {
      const T num = inter[b] + eps, den = uni[b] + eps;
      // d/dI and d/dU of -(I+eps)/(U+eps)
      const T d_i = -g / den;
      const T d_u = g * num / (den * den);
      for (size_t k = b * per; k < (b + 1) * per; ++k) {
        // I = sum s g, U = sum s + sum g - I
        if (ds) ds[k] += d_i * gv[k] + d_u * (T(1) - gv[k]);
        if (dg) dg[k] += d_i * sv[k] + d_u * (T(1) - sv[k]);
      }
    }
  });
}

template <typename T>
Tensor<T> seg_loss(const Tensor<T>& s, const Tensor<T>& gt) {
  return nc::add(bce_loss(s, gt), iou_loss(s, gt));
}

template <typename T>
Tensor<T> heatmap_loss(const Tensor<T>& m, const Tensor<T>& gt) {
  require_same_shape(m, gt, "heatmap_loss");
  const auto mv = m.data();
  const auto gv = gt.data();
  const size_t n = mv.size();
  if (n == 0) throw ContractError("heatmap_loss: empty input");
  T total = 0;
  for (size_t i = 0; i < n; ++i) total += (mv[i] - gv[i]) * (mv[i] - gv[i]);
  return nc::make_result<T>(Shape{}, {total / T(n)}, {m, gt}, [n](Node<T>& self) {
    const auto& mv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    const T g = T(2) * self.grad[0] / T(n);
    if (T* dm = self.parent_grad(0))
      for (size_t i = 0; i < n; ++i) dm[i] += g * (mv[i] - gv[i]);
    if (T* dg = self.parent_grad(1))
      for (size_t i = 0; i < n; ++i) dg[i] -= g * (mv[i] - gv[i]);
  });
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "l1_loss");
  const auto pv = pred.data();
  const auto tv = target.data();
  const size_t n = pv.size();
  if (n == 0) throw ContractError("l1_loss: empty input");
  T total = 0;
  auto sign = std::make_shared<std::vector<int8_t>>(n);
  nc::BranchTrace* trace = nc::branch_trace();
  for (size_t i = 0; i < n; ++i) {
    const T d = pv[i] - tv[i];
    const int64_t actual = d > T(0) ? 1 : (d < T(0) ? -1 : 0);
    (*sign)[i] = static_cast<int8_t>(trace ? trace->branch(actual) : actual);
    total += T((*sign)[i]) * d;
  }
  return nc::make_result<T>(Shape{}, {total / T(n)}, {pred, target}, [n, sign](Node<T>& self) {
    const T g = self.grad[0] / T(n);
    if (T* dp = self.parent_grad(0))
      for (size_t i = 0; i < n; ++i) dp[i] += g * T((*sign)[i]);
    if (T* dt = self.parent_grad(1))
      for (size_t i = 0; i < n; ++i) dt[i] -= g * T((*sign)[i]);
  });
}

template <typename T>
Tensor<T> regression_loss(const std::vector<Tensor<T>>& layers, const Tensor<T>& gt) {
  if (layers.empty()) throw ContractError("regression_loss: no decoder layers");
  std::vector<Tensor<T>> terms;
  for (const auto& layer : layers) terms.push_back(l1_loss(layer, gt));
  return nc::weighted_sum(terms, std::vector<T>(terms.size(), T(1)));
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& planes, const Tensor<T>& points) {
  require_nchw(planes, "bilinear_sample");
  const int64_t n = planes.dim(0), k = planes.dim(1), h = planes.dim(2), w = planes.dim(3);
  if (points.shape() != Shape{n, k, 2}) throw ContractError("bilinear_sample: points must be [N,K,2]");
  if (h < 2 || w < 2) throw ContractError("bilinear_sample: planes must be at least 2x2");

  struct Tap {
    int64_t base;    // offset of (y0, x0)
    T fx, fy;        // fractional offsets
    bool cx, cy;     // coordinate clamped (no gradient)
  };
  std::vector<Tap> taps(static_cast<size_t>(n * k));
  std::vector<T> out(static_cast<size_t>(n * k));
  const auto pv = planes.data();
  const auto qv = points.data();
  nc::BranchTrace* trace = nc::branch_trace();
  for (int64_t i = 0; i < n * k; ++i) {
    const T x_raw = qv[2 * i] * T(w - 1), y_raw = qv[2 * i + 1] * T(h - 1);
    // clamp side per axis (-1 low, 0 inside, 1 high) and the interpolation cell
    auto side = [](T v, T hi) -> int64_t { return v < T(0) ? -1 : (v > hi ? 1 : 0); };
    int64_t sx = side(x_raw, T(w - 1)), sy = side(y_raw, T(h - 1));
    const T xc = std::clamp(x_raw, T(0), T(w - 1)), yc = std::clamp(y_raw, T(0), T(h - 1));
    int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(xc)), w - 2);
    int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(yc)), h - 2);
    if (trace) {
      sx = trace->branch(sx);
      sy = trace->branch(sy);
      x0 = trace->branch(x0);
      y0 = trace->branch(y0);
    }
    const T x = sx < 0 ? T(0) : (sx > 0 ? T(w - 1) : x_raw);
    const T y = sy < 0 ? T(0) : (sy > 0 ? T(h - 1) : y_raw);
    Tap& t = taps[static_cast<size_t>(i)];
    t.base = i * h * w + y0 * w + x0;
    t.fx = x - T(x0);
    t.fy = y - T(y0);
    t.cx = sx != 0;
    t.cy = sy != 0;
    const T v00 = pv[t.base], v01 = pv[t.base + 1], v10 = pv[t.base + w], v11 = pv[t.base + w + 1];
    out[static_cast<size_t>(i)] = (T(1) - t.fy) * ((T(1) - t.fx) * v00 + t.fx * v01) + t.fy * ((T(1) - t.fx) * v10 + t.fx * v11);
  }
  return nc::make_result<T>(Shape{n, k}, std::move(out), {planes, points}, [taps, w, h](Node<T>& self) {
    const auto& pv = self.parents[0]->value;
    T* dp = self.parent_grad(0);
    T* dq = self.parent_grad(1);
    for (size_t i = 0; i < taps.size(); ++i) {
      const Tap& t = taps[i];
      const T g = self.grad[i];
      if (dp) {
        dp[t.base] += g * (T(1) - t.fy) * (T(1) - t.fx);
        dp[t.base + 1] += g * (T(1) - t.fy) * t.fx;
        dp[t.base + w] += g * t.fy * (T(1) - t.fx);
        dp[t.base + w + 1] += g * t.fy * t.fx;
      }
      if (dq) {
        const T v00 = pv[t.base], v01 = pv[t.base + 1], v10 = pv[t.base + w], v11 = pv[t.base + w + 1];
        if (!t.cx) dq[2 * i] += g * T(w - 1) * ((T(1) - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
        if (!t.cy) dq[2 * i + 1] += g * T(h - 1) * ((T(1) - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
      }
    }
  });
}

template <typename T>
Tensor<T> cons1_loss(const Tensor<T>& m, const Tensor<T>& keypoints) {
  const Tensor<T> sampled = bilinear_sample(m, keypoints);
  return l1_loss(sampled, Tensor<T>(sampled.shape(), T(1)));
}

template <typename T>
DistanceMaps<T> distance_maps(const Tensor<T>& s) {
  require_nchw(s, "distance_maps");
  if (s.dim(1) != 1) throw ContractError("distance_maps: expected one segmentation channel");
  const int64_t n = s.dim(0), h = s.dim(2), w = s.dim(3);
  DistanceMaps<T> out{Tensor<T>(s.shape(), T(0)), std::vector<bool>(static_cast<size_t>(n), false)};
  const auto sv = s.data();
  auto dv = out.maps.data();
  const size_t per = static_cast<size_t>(h * w);
  for (int64_t b = 0; b < n; ++b) {
    geom::Mask mask(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < per; ++i) mask.values[i] = sv[b * per + i] >= T(0.5) ? 1 : 0;
    if (mask.empty()) continue;
    out.valid[static_cast<size_t>(b)] = true;
    const geom::Plane d = geom::boundary_distance_map(mask);
    for (size_t i = 0; i < per; ++i) dv[b * per + i] = static_cast<T>(d.values[i]);
  }
  return out;
}

template <typename T>
Cons2Result<T> cons2_loss(const DistanceMaps<T>& d, const Tensor<T>& keypoints) {
  const int64_t n = keypoints.dim(0), q = keypoints.dim(1);
  if (d.maps.dim(0) != n) throw ContractError("cons2_loss: batch mismatch");
  Cons2Result<T> out;
  std::vector<T> weights(static_cast<size_t>(n * q), T(0));
  int used = 0;
  for (int64_t b = 0; b < n; ++b) {
    if (!d.valid[static_cast<size_t>(b)]) {
      ++out.skipped;
      continue;
    }
    ++used;
    for (int64_t i = 0; i < q; ++i) weights[static_cast<size_t>(b * q + i)] = T(1);
  }
  if (used == 0) {
    out.loss = Tensor<T>::scalar(T(0));
    return out;
  }
  // Every keypoint of a sample reads the sample's single map.
  const int64_t h = d.maps.dim(2), w = d.maps.dim(3);
  Tensor<T> tiled(Shape{n, q, h, w});
  {
    const auto src = d.maps.data();
    auto dst = tiled.data();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < q; ++i)
        std::copy_n(src.begin() + b * h * w, h * w, dst.begin() + (b * q + i) * h * w);
  }
  const Tensor<T> sampled = bilinear_sample(tiled, keypoints);  // D >= 0, so |D| = D
  const Tensor<T> mask(Shape{n, q}, std::move(weights));
  out.loss = nc::scale(nc::sum(nc::mul(sampled, mask)), T(1) / T(used * q));
  return out;
}

template <typename T>
Cons2Result<T> cons2_loss(const Tensor<T>& s, const Tensor<T>& keypoints) {
  return cons2_loss(distance_maps(s), keypoints);
}

template <typename T>
Tensor<T> total_loss(const LossTerms<T>& terms, const LossWeights& w) {
  w.validate();
  std::vector<Tensor<T>> parts;
  std::vector<T> weights;
  auto take = [&](const Tensor<T>& t, double weight) {
    if (!t.defined()) return;
    parts.push_back(t);
    weights.push_back(static_cast<T>(weight));
  };
  take(terms.seg, w.seg);
  take(terms.heatmap, w.heatmap);
  take(terms.regression, w.regression);
  take(terms.cons1, w.cons1);
  take(terms.cons2, w.cons2);
  if (parts.empty()) return Tensor<T>::scalar(T(0));
  return nc::weighted_sum(parts, weights);
}

template <typename T>
LossTerms<T> compute_losses(const Prediction<T>& pred, const Supervision<T>& sup, const LossWeights& w,
                            bool consistency, const DistanceMaps<T>* fixed_distance) {
  if (pred.keypoints.empty()) throw ContractError("compute_losses: no keypoint layers");
  LossTerms<T> t;
  t.seg = seg_loss(pred.seg, sup.mask);
  t.heatmap = heatmap_loss(pred.heatmaps, sup.heatmaps);
  t.regression = regression_loss(pred.keypoints, sup.keypoints);
  if (consistency) {
    const Tensor<T>& final_kp = pred.keypoints.back();
    t.cons1 = cons1_loss(pred.heatmaps, final_kp);
    auto c2 = fixed_distance ? cons2_loss(*fixed_distance, final_kp) : cons2_loss(pred.seg, final_kp);
    t.cons2 = c2.loss;
    t.cons2_skipped = c2.skipped;
  }
  t.total = total_loss(t, w);
  return t;
}

#define MEAFORMER_INSTANTIATE_LOSSES(T)                                                                  \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> iou_loss(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> seg_loss(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> heatmap_loss(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> regression_loss(const std::vector<Tensor<T>>&, const Tensor<T>&);                  \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> cons1_loss(const Tensor<T>&, const Tensor<T>&);                                    \
  template DistanceMaps<T> distance_maps(const Tensor<T>&);                                             \
  template Cons2Result<T> cons2_loss(const DistanceMaps<T>&, const Tensor<T>&);                         \
  template Cons2Result<T> cons2_loss(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> total_loss(const LossTerms<T>&, const LossWeights&);                               \
  template LossTerms<T> compute_losses(const Prediction<T>&, const Supervision<T>&, const LossWeights&, \
                                       bool, const DistanceMaps<T>*);

MEAFORMER_INSTANTIATE_LOSSES(float)
MEAFORMER_INSTANTIATE_LOSSES(double)

}  // namespace meaformer::loss
