#include "meaformer/geometry/recist.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "meaformer/geometry/distance.hpp"

namespace meaformer::geom {

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

double squared(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

struct Chord {
  double length = -1.0;
  Point a, b;
};

// Outermost 0.5-level crossings of the interpolated mask along origin + s*dir.
Chord chord_along(const Mask& mask, Point origin, Point dir, double reach) {
  constexpr double kStep = 0.1;
  const int n = static_cast<int>(std::ceil(2.0 * reach / kStep)) + 1;
  auto value = [&](double s) { return sample_mask(mask, origin.x + dir.x * s, origin.y + dir.y * s); };
  auto s_at = [&](int i) { return -reach + kStep * i; };

  int first = -1, last = -1;
  for (int i = 0; i < n; ++i)
    if (value(s_at(i)) >= 0.5) {
      if (first < 0) first = i;
      last = i;
    }
  if (first < 0) return {};

  // Bisect on [outside, inside] for each end.
  auto refine = [&](double outside, double inside) {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (outside + inside);
      (value(mid) >= 0.5 ? inside : outside) = mid;
    }
    return 0.5 * (outside + inside);
  };
  const double s0 = first > 0 ? refine(s_at(first - 1), s_at(first)) : s_at(first);
  const double s1 = last < n - 1 ? refine(s_at(last + 1), s_at(last)) : s_at(last);
  Chord c;
  c.length = s1 - s0;
  c.a = origin + dir * s0;
  c.b = origin + dir * s1;
  return c;
}

}  // namespace

Mask largest_component(const Mask& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<int> label(static_cast<size_t>(h) * w, -1);
  int best_label = -1;
  int64_t best_size = 0;
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.values[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
    const int id = next++;
    int64_t size = 0;
    label[static_cast<size_t>(start)] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      ++size;
      const int r = cur / w, c = cur % w;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (!mask.inside(rr, cc)) continue;
          const int k = rr * w + cc;
          if (mask.values[static_cast<size_t>(k)] && label[static_cast<size_t>(k)] < 0) {
            label[static_cast<size_t>(k)] = id;
            queue.push_back(k);
          }
        }
    }
    if (size > best_size) {
      best_size = size;
      best_label = id;
    }
  }
  Mask out(h, w);
  for (size_t i = 0; i < label.size(); ++i) out.values[i] = (best_label >= 0 && label[i] == best_label) ? 1 : 0;
  return out;
}

std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (size_t i = pts.size() - 1, lower = k + 1; i > 0; --i) {
    const Point& p = pts[i - 1];
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

std::pair<Point, Point> farthest_pair(const std::vector<Point>& hull) {
  const size_t n = hull.size();
  if (n == 0) throw GeometryError("farthest pair of an empty point set");
  if (n == 1) return {hull[0], hull[0]};
  if (n == 2) return {hull[0], hull[1]};
  std::pair<Point, Point> best{hull[0], hull[1]};
  double best_d = squared(hull[0], hull[1]);
  auto consider = [&](Point a, Point b) {
    const double d = squared(a, b);
    if (d > best_d) {
      best_d = d;
      best = {a, b};
    }
  };
  size_t j = 1;
  for (size_t i = 0; i < n; ++i) {
    const size_t ni = (i + 1) % n;
    // advance the antipodal caliper while the triangle area grows
    while (std::abs(cross(hull[i], hull[ni], hull[(j + 1) % n])) > std::abs(cross(hull[i], hull[ni], hull[j])))
      j = (j + 1) % n;
    consider(hull[i], hull[j]);
    consider(hull[ni], hull[j]);
  }
  return best;
}

double sample_mask(const Mask& mask, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto v = [&](int r, int c) -> double { return mask.inside(r, c) ? mask.at(r, c) : 0.0; };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) + fy * ((1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1));
}

RecistEndpoints recist_from_mask(const Mask& mask) {
  if (mask.empty()) throw GeometryError("RECIST of an empty mask");
  const Mask component = largest_component(mask);
  const Mask boundary = boundary_pixels(component);
  std::vector<Point> pts;
  for (int r = 0; r < boundary.height; ++r)
    for (int c = 0; c < boundary.width; ++c)
      if (boundary.at(r, c)) pts.push_back({static_cast<double>(c), static_cast<double>(r)});

  auto [la, lb] = farthest_pair(convex_hull(pts));
  const double long_len = distance(la, lb);
  if (!(long_len > 0.0)) throw GeometryError("zero-length long axis (single-pixel lesion)");
  canonical_order(la, lb);

  const Point u = (lb - la) * (1.0 / long_len);
  const Point normal{-u.y, u.x};
  const double reach = long_len + 2.0;
  Chord best;
  for (double t = 0.0; t <= long_len + 1e-9; t += kChordSweepStep) {
    const Chord c = chord_along(component, la + u * t, normal, reach);
    if (c.length > best.length) best = c;
  }
  if (!(best.length > 0.0)) throw GeometryError("no perpendicular chord found");
  Point sa = best.a, sb = best.b;
  canonical_order(sa, sb);
  return {la, lb, sa, sb};
}

}  // namespace meaformer::geom
