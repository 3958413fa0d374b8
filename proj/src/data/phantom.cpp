#include "meaformer/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "meaformer/data/augment.hpp"
#include "meaformer/geometry/measures.hpp"
#include "meaformer/geometry/recist.hpp"
#include "meaformer/numcore/rng.hpp"

namespace meaformer::data {

void PhantomConfig::validate() const {
  if (height < 16 || width < 16) throw DataError("phantom image must be at least 16x16");
  if (!(spacing_mm_per_px > 0.0)) throw DataError("spacing must be positive");
  if (!(min_area_fraction > 0.0 && min_area_fraction < max_area_fraction && max_area_fraction < 1.0))
    throw DataError("area fractions must satisfy 0 < min < max < 1");
  if (!(min_aspect > 0.0 && min_aspect <= 1.0)) throw DataError("min_aspect must be in (0, 1]");
  if (min_harmonics < 1 || max_harmonics < min_harmonics) throw DataError("bad harmonic count range");
  if (!(max_perturbation >= 0.0 && max_perturbation < 1.0)) throw DataError("max_perturbation must be in [0, 1)");
  if (!(min_contrast >= 0.0 && min_contrast < 1.0)) throw DataError("min_contrast must be in [0, 1)");
  if (margin_px < 0) throw DataError("margin must be non-negative");
  if (max_retries < 1) throw DataError("max_retries must be positive");
}

double LesionShape::radius(double theta) const {
  const double phi = theta - angle;
  const double c = std::cos(phi), s = std::sin(phi);
  double r = major * minor / std::sqrt(minor * minor * c * c + major * major * s * s);
  for (size_t i = 0; i < orders.size(); ++i) r += amplitudes[i] * std::cos(orders[i] * phi + phases[i]);
  return r;
}

bool LesionShape::contains(Point p) const {
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double rho = std::hypot(dx, dy);
  if (rho == 0.0) return true;
  return rho <= radius(std::atan2(dy, dx));
}

Mask rasterize(const LesionShape& shape, int height, int width) {
  Mask m(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) m.at(r, c) = shape.contains({double(c), double(r)}) ? 1 : 0;
  return m;
}

LesionShape draw_lesion_shape(uint64_t seed, const PhantomConfig& config) {
  nc::Rng rng(seed);
  const double image_area = double(config.height) * config.width;
  // aim inside the allowed band so perturbation and rasterization rarely push it out
  const double lo = config.min_area_fraction, hi = config.max_area_fraction;
  const double area = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.25 * (hi - lo)) * image_area;
  const double aspect = rng.uniform(config.min_aspect, 1.0);
  LesionShape s;
  s.major = std::sqrt(area / (std::numbers::pi * aspect));
  s.minor = aspect * s.major;
  s.angle = rng.uniform(0.0, std::numbers::pi);

  const double budget = rng.uniform() * config.max_perturbation * s.minor;
  const int n = static_cast<int>(rng.uniform_int(config.min_harmonics, config.max_harmonics));
  std::vector<double> weights(static_cast<size_t>(n));
  double total = 0.0;
  for (auto& w : weights) total += (w = rng.uniform(0.2, 1.0));
  for (int k = 0; k < n; ++k) {
    s.orders.push_back(k + 2);  // order 1 would only shift the centre
    s.amplitudes.push_back(budget * weights[static_cast<size_t>(k)] / total);
    s.phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }

  const double reach = s.major + budget;
  auto place = [&](int extent) {
    const double a = config.margin_px + reach, b = extent - 1 - config.margin_px - reach;
    return a <= b ? rng.uniform(a, b) : 0.5 * (extent - 1);
  };
  s.center.x = place(config.width);
  s.center.y = place(config.height);
  return s;
}

double lesion_contrast(const Plane& image, const Mask& mask) {
  double in = 0.0, out = 0.0;
  int64_t n_in = 0, n_out = 0;
  for (size_t i = 0; i < image.values.size(); ++i) {
    if (mask.values[i]) {
      in += image.values[i];
      ++n_in;
    } else {
      out += image.values[i];
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) return 0.0;
  return in / double(n_in) - out / double(n_out);
}

Phantom render_phantom(const LesionShape& shape, uint64_t seed, const PhantomConfig& config) {
  const int h = config.height, w = config.width;
  Phantom p;
  p.mask = rasterize(shape, h, w);
  if (p.mask.empty()) throw DataError("lesion shape covers no pixel centre");
  p.recist = geom::recist_from_mask(p.mask);
  p.box = *geom::mask_bounding_box(p.mask);
  p.spacing_mm_per_px = config.spacing_mm_per_px;
  p.seed = seed;

  nc::Rng rng(nc::Rng::derive_seed(seed, 1));
  Plane noise(h, w);
  for (auto& v : noise.values) v = rng.uniform(-1.0, 1.0);
  noise = gaussian_blur(noise, 2.5);
  double peak = 1e-12;
  for (double v : noise.values) peak = std::max(peak, std::abs(v));

  const double base = rng.uniform(0.3, 0.6);
  const double sign = rng.bernoulli(0.3) ? -1.0 : 1.0;
  const double contrast = rng.uniform(0.22, 0.38);
  Plane lesion(h, w);
  for (size_t i = 0; i < lesion.values.size(); ++i) lesion.values[i] = p.mask.values[i];
  lesion = gaussian_blur(lesion, 0.6);  // soften the staircase edge

  p.image = Plane(h, w);
  for (size_t i = 0; i < p.image.values.size(); ++i) {
    double v = base + 0.1 * noise.values[i] / peak + sign * contrast * lesion.values[i] + rng.normal(0.0, 0.02);
    v = std::clamp(v, 0.0, 1.0);
    p.image.values[i] = static_cast<double>(static_cast<float>(v));
  }
  return p;
}

Phantom generate_phantom(uint64_t seed, const PhantomConfig& config) {
  config.validate();
  const double image_area = double(config.height) * config.width;
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    const uint64_t draw_seed = attempt == 0 ? seed : nc::Rng::derive_seed(seed, 1000 + attempt);
    const LesionShape shape = draw_lesion_shape(draw_seed, config);
    const Mask mask = rasterize(shape, config.height, config.width);
    const double fraction = double(mask.count()) / image_area;
    if (fraction < config.min_area_fraction || fraction > config.max_area_fraction) continue;
    const auto box = geom::mask_bounding_box(mask);
    if (box->top_left.x < config.margin_px || box->top_left.y < config.margin_px ||
        box->bottom_right.x > config.width - 1 - config.margin_px ||
        box->bottom_right.y > config.height - 1 - config.margin_px)
      continue;
    Phantom p = render_phantom(shape, draw_seed, config);
    if (std::abs(lesion_contrast(p.image, p.mask)) < config.min_contrast) continue;
    p.seed = seed;
    return p;
  }
  throw DataError("no phantom satisfying the constraints after " + std::to_string(config.max_retries) +
                  " draws (seed " + std::to_string(seed) + ")");
}

Mask erode(const Mask& mask, int radius) {
  const int h = mask.height, w = mask.width;
  // separable: a pixel survives when its row window and then column window are all foreground
  auto pass = [&](const Mask& src, bool horizontal) {
    Mask out(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        bool keep = true;
        for (int d = -radius; d <= radius && keep; ++d) {
          const int rr = horizontal ? r : r + d, cc = horizontal ? c + d : c;
          keep = src.inside(rr, cc) && src.at(rr, cc);
        }
        out.at(r, c) = keep;
      }
    return out;
  };
  return pass(pass(mask, true), false);
}

Point sample_click(const Mask& mask, uint64_t seed) {
  if (mask.empty()) throw DataError("cannot place a click on an empty mask");
  const Mask core = erode(mask, 2);
  std::vector<Point> candidates;
  for (int r = 0; r < core.height; ++r)
    for (int c = 0; c < core.width; ++c)
      if (core.at(r, c)) candidates.push_back({double(c), double(r)});
  if (!candidates.empty()) {
    nc::Rng rng(seed);
    return candidates[static_cast<size_t>(rng.uniform_int(0, int64_t(candidates.size()) - 1))];
  }
  double sx = 0.0, sy = 0.0;
  int64_t n = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        sx += c;
        sy += r;
        ++n;
      }
  const Point centroid{sx / double(n), sy / double(n)};
  Point best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        const double d = geom::distance({double(c), double(r)}, centroid);
        if (d < best_d) {
          best_d = d;
          best = {double(c), double(r)};
        }
      }
  return best;
}

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point p, Point a, Point b) {
  const double len = geom::distance(a, b);
  if (len == 0.0) return geom::distance(p, a) < 1e-9;
  if (std::abs(cross(a, b, p)) / len > 1e-9) return false;
  return std::min(a.x, b.x) - 1e-9 <= p.x && p.x <= std::max(a.x, b.x) + 1e-9 &&
         std::min(a.y, b.y) - 1e-9 <= p.y && p.y <= std::max(a.y, b.y) + 1e-9;
}

}  // namespace

Mask quad_pseudo_mask(const RecistEndpoints& recist, int height, int width) {
  const std::vector<Point> v{recist.long_a, recist.short_a, recist.long_b, recist.short_b};
  // collinear when every corner sits on the line through the farthest pair
  Point a = v[0], b = v[0];
  double far = 0.0;
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = i + 1; j < 4; ++j)
      if (geom::distance(v[i], v[j]) > far) {
        far = geom::distance(v[i], v[j]);
        a = v[i];
        b = v[j];
      }
  bool flat = far < 1e-9;
  if (!flat) {
    flat = true;
    for (const Point& p : v) flat = flat && std::abs(cross(a, b, p)) / far < 1e-9;
  }
  if (flat) throw geom::GeometryError("degenerate RECIST endpoints: quadrilateral has no area");

  Mask m(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Point p{double(c), double(r)};
      bool inside = false;
      int winding = 0;
      for (size_t i = 0; i < 4 && !inside; ++i) {
        const Point s = v[i], e = v[(i + 1) % 4];
        if (on_segment(p, s, e)) inside = true;
        if (s.y <= p.y) {
          if (e.y > p.y && cross(s, e, p) > 0) ++winding;
        } else if (e.y <= p.y && cross(s, e, p) < 0) {
          --winding;
        }
      }
      m.at(r, c) = inside || winding != 0;
    }
  return m;
}

}  // namespace meaformer::data
