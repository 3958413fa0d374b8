#include "meaformer/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "meaformer/geometry/measures.hpp"
#include "meaformer/geometry/recist.hpp"
#include "meaformer/geometry/transform.hpp"
#include "meaformer/numcore/rng.hpp"

namespace meaformer::data {

void AugmentationConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError(std::string(name) + " must be a probability");
  };
  prob(scale_p, "scale_p");
  prob(jitter_p, "jitter_p");
  prob(rotation_p, "rotation_p");
  prob(photometric_p, "photometric_p");
  prob(blur_p, "blur_p");
  for (double v : {scale_min, scale_max, jitter_px, rotation_deg, brightness, contrast, blur_sigma_min, blur_sigma_max})
    if (!std::isfinite(v)) throw DataError("augmentation ranges must be finite");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw DataError("scale range must satisfy 0 < min <= max");
  if (jitter_px < 0.0 || rotation_deg < 0.0 || brightness < 0.0 || contrast < 0.0 || contrast >= 1.0)
    throw DataError("augmentation magnitudes must be non-negative (contrast < 1)");
  if (!(blur_sigma_min >= 0.0 && blur_sigma_min <= blur_sigma_max)) throw DataError("bad blur sigma range");
  if (max_retries < 1) throw DataError("max_retries must be positive");
}

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.scale_p = c.jitter_p = c.rotation_p = c.photometric_p = c.blur_p = 0.0;
  return c;
}

Plane gaussian_blur(const Plane& plane, double sigma) {
  if (sigma <= 0.0) return plane;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += (k[size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= total;
  const int h = plane.height, w = plane.width;
  Plane tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[size_t(i + radius)] * plane.at(r, std::clamp(c + i, 0, w - 1));
      tmp.at(r, c) = s;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[size_t(i + radius)] * tmp.at(std::clamp(r + i, 0, h - 1), c);
      out.at(r, c) = s;
    }
  return out;
}

namespace {

bool touches_border(const Mask& m) {
  const auto box = geom::mask_bounding_box(m);
  return !box || box->top_left.x < 1 || box->top_left.y < 1 || box->bottom_right.x > m.width - 2 ||
         box->bottom_right.y > m.height - 2;
}

Plane quantize(Plane p) {
  for (auto& v : p.values) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  return p;
}

}  // namespace

Point Warp::forward(Point p, int height, int width) const {
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  const double t = angle_deg * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
  const double dx = p.x - cx, dy = p.y - cy;
  return {cx + scale * (c * dx - s * dy) + tx, cy + scale * (s * dx + c * dy) + ty};
}

Point Warp::inverse(Point p, int height, int width) const {
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  const double t = angle_deg * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
  const double dx = (p.x - cx - tx) / scale, dy = (p.y - cy - ty) / scale;
  return {cx + c * dx + s * dy, cy - s * dx + c * dy};
}

std::optional<Augmented> apply_warp(const Phantom& phantom, Point click, const Warp& warp, uint64_t seed) {
  const int h = phantom.height(), w = phantom.width();
  Mask mask(h, w);
  Plane image(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const Point src = warp.inverse({double(c), double(r)}, h, w);
      image.at(r, c) = geom::sample_bilinear(phantom.image, src.x, src.y);
      mask.at(r, c) = geom::sample_mask(phantom.mask, src.x, src.y) >= 0.5;
    }
  if (touches_border(mask)) return std::nullopt;

  Augmented out{phantom, click};
  Phantom& p = out.phantom;
  p.image = quantize(std::move(image));
  p.mask = std::move(mask);
  p.box = *geom::mask_bounding_box(p.mask);
  if (warp.angle_deg != 0.0) {
    p.recist = geom::recist_from_mask(p.mask);
  } else {
    const auto& e = phantom.recist;
    auto f = [&](Point q) { return warp.forward(q, h, w); };
    p.recist = RecistEndpoints{f(e.long_a), f(e.long_b), f(e.short_a), f(e.short_b)}.canonical();
  }
  out.click = warp.forward(click, h, w);
  const int cr = static_cast<int>(std::lround(out.click.y)), cc = static_cast<int>(std::lround(out.click.x));
  if (!p.mask.inside(cr, cc) || !p.mask.at(cr, cc)) out.click = sample_click(p.mask, seed);
  return out;
}

Augmented augment(const Phantom& phantom, Point click, const AugmentationConfig& cfg, uint64_t seed) {
  cfg.validate();
  nc::Rng rng(seed);
  Augmented out{phantom, click};

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Warp warp;
    bool any = false;
    if (rng.bernoulli(cfg.scale_p) && cfg.scale_max > cfg.scale_min) {
      warp.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
      any = true;
    }
    if (rng.bernoulli(cfg.jitter_p) && cfg.jitter_px > 0.0) {
      warp.tx = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
      warp.ty = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
      any = true;
    }
    if (rng.bernoulli(cfg.rotation_p) && cfg.rotation_deg > 0.0) {
      warp.angle_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
      any = true;
    }
    if (!any) break;
    if (auto warped = apply_warp(phantom, click, warp, rng.next_u64())) {
      out = std::move(*warped);
      break;
    }
  }
  const bool photometric = rng.bernoulli(cfg.photometric_p) && (cfg.brightness > 0.0 || cfg.contrast > 0.0);
  const double shift = photometric ? rng.uniform(-cfg.brightness, cfg.brightness) : 0.0;
  const double gain = photometric ? 1.0 + rng.uniform(-cfg.contrast, cfg.contrast) : 1.0;
  const bool blur = rng.bernoulli(cfg.blur_p) && cfg.blur_sigma_max > 0.0;
  const double sigma = blur ? rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max) : 0.0;
  if (photometric) {
    Plane& img = out.phantom.image;
    double mean = 0.0;
    for (double v : img.values) mean += v;
    mean /= double(img.values.size());
    for (auto& v : img.values) v = (v - mean) * gain + mean + shift;
    img = quantize(std::move(img));
  }
  if (blur) out.phantom.image = quantize(gaussian_blur(out.phantom.image, sigma));
  return out;
}

}  // namespace meaformer::data
