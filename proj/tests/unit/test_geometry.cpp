#include <gtest/gtest.h>

#include <cmath>

#include "geometry_oracles.hpp"
#include "meaformer/geometry/distance.hpp"
#include "meaformer/geometry/heatmap.hpp"
#include "meaformer/geometry/measures.hpp"
#include "meaformer/geometry/recist.hpp"
#include "meaformer/geometry/transform.hpp"

using namespace meaformer;
using namespace meaformer::geom;

namespace {

Mask square_mask(int size, int r0, int c0, int side) {
  Mask m(size, size);
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) m.at(r, c) = 1;
  return m;
}

RecistMeasurement measurement(double long_px, double short_px) {
  RecistEndpoints e{{10.0, 20.0}, {10.0 + long_px, 20.0}, {15.0, 20.0 - short_px / 2}, {15.0, 20.0 + short_px / 2}};
  return RecistMeasurement::from_endpoints(e.canonical(), MeasurementSource::Segmentation, 1.0);
}

}  // namespace

TEST(Heatmap, PeakIsOneAtCenter) {
  const auto hm = make_gt_heatmap({20.0, 30.0}, kDefaultHeatmapSigma, 64, 64);
  EXPECT_EQ(hm.plane.at(30, 20), 1.0);
  EXPECT_FALSE(hm.center_outside);
}

TEST(Heatmap, ValueAtSigmaDistance) {
  const auto hm = make_gt_heatmap({20.0, 30.0}, 5.0, 64, 64);
  EXPECT_NEAR(hm.plane.at(30, 25), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(hm.plane.at(35, 20), 0.6065306597, 1e-9);
}

TEST(Heatmap, OutsideCenterRendersTailAndFlags) {
  const auto hm = make_gt_heatmap({-3.0, 10.0}, 5.0, 32, 32);
  EXPECT_TRUE(hm.center_outside);
  EXPECT_NEAR(hm.plane.at(10, 0), std::exp(-9.0 / 50.0), 1e-12);
}

TEST(Heatmap, DecodeRoundTrip) {
  const auto hm = make_gt_heatmap({20.0, 30.0}, 5.0, 64, 64);
  const auto p = decode_heatmap(hm.plane);
  EXPECT_FALSE(p.degenerate);
  EXPECT_LE(distance(p.location, {20.0, 30.0}), 0.5);
}

TEST(Heatmap, DecodeRoundTripAwayFromBorders) {
  nc::Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Point c{rng.uniform(15.0, 48.0), rng.uniform(15.0, 48.0)};
    const auto p = decode_heatmap(make_gt_heatmap(c, 5.0, 64, 64).plane);
    EXPECT_LE(distance(p.location, c), 0.5 * std::sqrt(2.0) + 1e-12);
    EXPECT_LE(std::abs(p.location.x - c.x), 0.5 + 1e-12);
    EXPECT_LE(std::abs(p.location.y - c.y), 0.5 + 1e-12);
  }
}

TEST(Heatmap, SingleHotPixel) {
  Plane p(16, 16);
  p.at(5, 9) = 1.0;
  const auto d = decode_heatmap(p);
  EXPECT_EQ(d.location, (Point{9.0, 5.0}));
}

TEST(Heatmap, UniformPlaneIsDegenerate) {
  const auto d = decode_heatmap(Plane(15, 21, 0.3));
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.location, (Point{10.0, 7.0}));
}

TEST(Distance, SinglePixel) {
  Mask m(9, 9);
  m.at(4, 4) = 1;
  const Plane d = boundary_distance_map(m);
  EXPECT_EQ(d.at(4, 4), 0.0);
  EXPECT_EQ(d.at(4, 5), 1.0);
  EXPECT_EQ(d.at(3, 4), 1.0);
}

TEST(Distance, SquareCenter) {
  const Plane d = boundary_distance_map(square_mask(15, 4, 4, 7));
  EXPECT_EQ(d.at(7, 7), 3.0);
}

TEST(Distance, MatchesBruteForceOnRandomMasks) {
  nc::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Mask m(32, 32);
    const double p = rng.uniform(0.05, 0.6);
    for (auto& v : m.values) v = rng.bernoulli(p) ? 1 : 0;
    if (m.empty()) m.at(0, 0) = 1;
    const Plane fast = boundary_distance_map(m);
    const Plane slow = oracle::brute_distance_map(m);
    for (size_t i = 0; i < fast.values.size(); ++i) ASSERT_NEAR(fast.values[i], slow.values[i], 1e-9);
  }
}

TEST(Distance, ZeroExactlyOnBoundaryAndLipschitz) {
  nc::Rng rng(5);
  const Mask m = oracle::random_blob(48, rng);
  const Plane d = boundary_distance_map(m);
  const Mask b = boundary_pixels(m);
  for (int r = 0; r < 48; ++r)
    for (int c = 0; c < 48; ++c) {
      EXPECT_EQ(d.at(r, c) == 0.0, b.at(r, c) == 1);
      if (c + 1 < 48) EXPECT_LE(std::abs(d.at(r, c) - d.at(r, c + 1)), 1.0 + 1e-12);
      if (r + 1 < 48) EXPECT_LE(std::abs(d.at(r, c) - d.at(r + 1, c)), 1.0 + 1e-12);
    }
}

TEST(Distance, EmptyMaskThrows) { EXPECT_THROW(boundary_distance_map(Mask(4, 4)), GeometryError); }

TEST(Recist, Disk) {
  const Mask m = oracle::filled_ellipse(48, 48, 24, 24, 10, 10);
  const auto e = recist_from_mask(m);
  // long axis joins pixel centres; the short chord ends on the 0.5 level, half a pixel further out
  EXPECT_NEAR(e.long_length(), 20.0, 1.0);
  EXPECT_NEAR(e.short_length(), 20.0, 1.0 + 1e-6);
  EXPECT_NEAR(e.long_length(), oracle::brute_long_axis(m), 1e-9);
}

TEST(Recist, Ellipse) {
  const Mask m = oracle::filled_ellipse(64, 64, 32, 32, 20, 10);
  const auto e = recist_from_mask(m);
  EXPECT_NEAR(e.long_length(), 40.0, 1.0);
  EXPECT_NEAR(e.short_length(), 20.0, 1.0 + 1e-6);
}

TEST(Recist, ThinSegment) {
  Mask m(40, 40);
  for (int c = 5; c <= 35; ++c) m.at(20, c) = 1;
  const auto e = recist_from_mask(m);
  EXPECT_NEAR(e.long_length(), 30.0, 1e-12);
  EXPECT_NEAR(e.short_length(), 1.0, 0.05);
}

TEST(Recist, UsesLargestComponent) {
  Mask m = oracle::filled_ellipse(64, 64, 20, 20, 12, 8);
  m.at(60, 60) = 1;
  m.at(61, 61) = 1;
  const auto e = recist_from_mask(m);
  EXPECT_NEAR(e.long_length(), 24.0, 1.0);
}

TEST(Recist, Errors) {
  EXPECT_THROW(recist_from_mask(Mask(8, 8)), GeometryError);
  Mask one(8, 8);
  one.at(3, 3) = 1;
  EXPECT_THROW(recist_from_mask(one), GeometryError);
}

TEST(Recist, CanonicalEndpointOrder) {
  nc::Rng rng(8);
  const auto e = recist_from_mask(oracle::random_blob(64, rng));
  EXPECT_EQ(e, e.canonical());
  EXPECT_TRUE(e.long_a.x < e.long_b.x || (e.long_a.x == e.long_b.x && e.long_a.y <= e.long_b.y));
}

TEST(Recist, OraclesOnRandomBlobs) {
  nc::Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask m = oracle::random_blob(64, rng);
    const auto e = recist_from_mask(m);
    EXPECT_NEAR(e.long_length(), oracle::brute_long_axis(m), 1e-9);
    const double ref = oracle::brute_short_axis(m, e.long_a, e.long_b);
    EXPECT_NEAR(e.short_length(), ref, 1.5) << "trial " << trial;
    // short axis perpendicular to the long axis
    const Point lu = e.long_b - e.long_a, su = e.short_b - e.short_a;
    EXPECT_NEAR((lu.x * su.x + lu.y * su.y) / (e.long_length() * e.short_length()), 0.0, 1e-9);
  }
}

TEST(ConvexHull, FarthestPairMatchesBruteForce) {
  nc::Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Point> pts;
    const int n = static_cast<int>(rng.uniform_int(2, 40));
    for (int i = 0; i < n; ++i)
      pts.push_back({static_cast<double>(rng.uniform_int(0, 30)), static_cast<double>(rng.uniform_int(0, 30))});
    double brute = 0.0;
    for (const auto& a : pts)
      for (const auto& b : pts) brute = std::max(brute, distance(a, b));
    const auto [a, b] = farthest_pair(convex_hull(pts));
    EXPECT_NEAR(distance(a, b), brute, 1e-12);
  }
}

TEST(Loi, ExampleBox) {
  const Box loi = loi_from_box({{40, 40}, {80, 100}}, 256, 256);
  EXPECT_EQ(loi, (Box{{0, 10}, {120, 130}}));
}

TEST(Loi, CenteredSquare) {
  const Box loi = loi_from_box({{100, 100}, {140, 140}}, 256, 256);
  EXPECT_EQ(loi, (Box{{80, 80}, {160, 160}}));
}

TEST(Loi, NearCornerShiftsToPreserveSide) {
  const Box loi = loi_from_box({{230, 2}, {250, 12}}, 256, 256);
  EXPECT_DOUBLE_EQ(loi.width(), 40.0);
  EXPECT_DOUBLE_EQ(loi.height(), 40.0);
  EXPECT_DOUBLE_EQ(loi.bottom_right.x, 255.0);
  EXPECT_DOUBLE_EQ(loi.top_left.y, 0.0);
}

TEST(Loi, ContainsBoxWhenUnclipped) {
  nc::Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double x0 = rng.uniform(0, 200), y0 = rng.uniform(0, 200);
    const Box b{{x0, y0}, {x0 + rng.uniform(1, 50), y0 + rng.uniform(1, 50)}};
    const Box loi = loi_from_box(b, 256, 256);
    EXPECT_NEAR(loi.width(), loi.height(), 1e-12);
    EXPECT_LE(loi.top_left.x, b.top_left.x);
    EXPECT_LE(loi.top_left.y, b.top_left.y);
    EXPECT_GE(loi.bottom_right.x, b.bottom_right.x);
    EXPECT_GE(loi.bottom_right.y, b.bottom_right.y);
  }
}

TEST(Loi, OversizedAxisClipsToImage) {
  const Box loi = loi_from_box({{10, 20}, {50, 30}}, 64, 64);
  EXPECT_EQ(loi, (Box{{0, 0}, {63, 63}}));
}

TEST(CropResize, IdentityLoi) {
  Plane img(16, 16);
  nc::Rng rng(1);
  for (auto& v : img.values) v = rng.uniform();
  const auto crop = crop_resize(img, full_image_box(16, 16), 16);
  EXPECT_DOUBLE_EQ(crop.map.scale_x, 1.0);
  EXPECT_DOUBLE_EQ(crop.map.offset_y, 0.0);
  for (size_t i = 0; i < img.values.size(); ++i) EXPECT_DOUBLE_EQ(crop.image.values[i], img.values[i]);
}

TEST(CropResize, CenterMapsToCenter) {
  const Box loi{{10, 20}, {70, 80}};
  const auto crop = crop_resize(Plane(128, 128), loi, 64);
  const Point c = crop.map.forward(loi.center());
  EXPECT_NEAR(c.x, 31.5, 1e-12);
  EXPECT_NEAR(c.y, 31.5, 1e-12);
}

TEST(CropResize, RoundTripPoints) {
  nc::Rng rng(9);
  const auto crop = crop_resize(Plane(256, 256), {{13.5, 40.25}, {133.5, 160.25}}, 64);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Point p{rng.uniform(0, 255), rng.uniform(0, 255)};
    worst = std::max(worst, distance(crop.map.inverse(crop.map.forward(p)), p));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(CropResize, MaskRoundTripKeepsArea) {
  const Mask m = oracle::filled_ellipse(128, 128, 60, 70, 20, 14, 0.4);
  const Box loi = loi_from_box(*mask_bounding_box(m), 128, 128);
  const Mask crop = crop_resize_mask(m, loi, 64);
  const auto map = crop_resize(Plane(128, 128), loi, 64).map;
  const Mask back = uncrop_mask(crop, map, 128, 128);
  EXPECT_GT(dice(back, m).value, 0.95);
}

TEST(Click, Channels) {
  const auto ch = click_channels({20, 30}, 64, 64);
  EXPECT_EQ(ch.click.at(30, 20), 1.0);
  EXPECT_EQ(ch.distance.at(30, 20), 0.0);
  EXPECT_NEAR(ch.distance.at(30, 30), 10.0 / std::sqrt(63.0 * 63.0 + 63.0 * 63.0), 1e-12);
  EXPECT_NEAR(ch.distance.at(30, 30), 0.1122, 1e-4);
  EXPECT_NEAR(ch.click.at(30, 23), std::exp(-0.5), 1e-12);
  for (double v : ch.distance.values) EXPECT_LE(v, 1.0);
  EXPECT_NEAR(ch.distance.at(63, 63), std::hypot(43.0, 33.0) / std::hypot(63.0, 63.0), 1e-12);
}

TEST(Click, OutsideThrows) {
  EXPECT_THROW(click_channels({-1, 5}, 64, 64), GeometryError);
  EXPECT_THROW(click_channels({5, 64}, 64, 64), GeometryError);
}

TEST(Fusion, PicksHeatmapWhenCloser) {
  const auto f = fuse_diameters(measurement(20, 10), measurement(21, 10), measurement(18, 10));
  EXPECT_EQ(f.long_candidate, MeasurementSource::Heatmap);
  EXPECT_DOUBLE_EQ(f.fused.long_px, 20.5);
  EXPECT_NEAR(f.fused.endpoints.long_length(), 20.5, 1e-9);
  EXPECT_FALSE(f.fallback);
}

TEST(Fusion, PicksRegressionWhenCloser) {
  const auto f = fuse_diameters(measurement(20, 10), measurement(24, 10), measurement(17, 10));
  EXPECT_EQ(f.long_candidate, MeasurementSource::Regression);
  EXPECT_DOUBLE_EQ(f.fused.long_px, 18.5);
}

TEST(Fusion, AllEqualIsIdempotent) {
  const auto m = measurement(20, 10);
  const auto f = fuse_diameters(m, m, m);
  EXPECT_DOUBLE_EQ(f.fused.long_px, 20.0);
  EXPECT_DOUBLE_EQ(f.fused.short_px, 10.0);
  EXPECT_NEAR(distance(f.fused.endpoints.long_a, m.endpoints.long_a), 0.0, 1e-12);
}

TEST(Fusion, SwapInvariantExceptTies) {
  const auto a = fuse_diameters(measurement(20, 10), measurement(23, 9), measurement(18, 12));
  const auto b = fuse_diameters(measurement(20, 10), measurement(18, 12), measurement(23, 9));
  EXPECT_DOUBLE_EQ(a.fused.long_px, b.fused.long_px);
  EXPECT_DOUBLE_EQ(a.fused.short_px, b.fused.short_px);
  const auto tie = fuse_diameters(measurement(20, 10), measurement(22, 10), measurement(18, 10));
  EXPECT_EQ(tie.long_candidate, MeasurementSource::Heatmap);
}

TEST(Fusion, PerAxisSelection) {
  const auto f = fuse_diameters(measurement(20, 10), measurement(21, 14), measurement(25, 11));
  EXPECT_EQ(f.long_candidate, MeasurementSource::Heatmap);
  EXPECT_EQ(f.short_candidate, MeasurementSource::Regression);
  EXPECT_DOUBLE_EQ(f.fused.short_px, 10.5);
}

TEST(Fusion, DegenerateFallsBackToSegmentation) {
  auto bad = measurement(20, 10);
  bad.degenerate = true;
  const auto f = fuse_diameters(measurement(20, 10), bad, measurement(30, 10));
  EXPECT_TRUE(f.fallback);
  EXPECT_DOUBLE_EQ(f.fused.long_px, 20.0);
}

TEST(Metrics, Dice) {
  const Mask a = square_mask(10, 0, 0, 5);
  EXPECT_DOUBLE_EQ(dice(a, a).value, 1.0);
  EXPECT_DOUBLE_EQ(dice(a, square_mask(10, 5, 5, 5)).value, 0.0);
  Mask left(10, 10), full(10, 10, 1);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 5; ++c) left.at(r, c) = 1;
  EXPECT_NEAR(dice(left, full).value, 2.0 / 3.0, 1e-15);
  const auto both = dice(Mask(4, 4), Mask(4, 4));
  EXPECT_TRUE(both.both_empty);
  EXPECT_EQ(both.value, 1.0);
}

TEST(Metrics, BoxIou) {
  EXPECT_DOUBLE_EQ(box_iou({{0, 0}, {10, 10}}, {{0, 0}, {10, 10}}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou({{0, 0}, {10, 10}}, {{5, 0}, {15, 10}}), 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(box_iou({{0, 0}, {1, 1}}, {{2, 2}, {3, 3}}), 0.0);
}

TEST(Metrics, LengthErrorMm) {
  const RecistEndpoints a{{0, 0}, {10, 0}, {5, -2}, {5, 2}};
  const RecistEndpoints b{{0, 0}, {12, 0}, {5, -1}, {5, 2}};
  const auto err = length_error_mm(a, b, 0.8);
  EXPECT_NEAR(err.long_mm, 1.6, 1e-12);
  EXPECT_NEAR(err.short_mm, 0.8, 1e-12);
}

TEST(Metrics, BoundingBox) {
  EXPECT_FALSE(mask_bounding_box(Mask(4, 4)).has_value());
  const auto b = mask_bounding_box(square_mask(20, 3, 5, 4));
  EXPECT_EQ(*b, (Box{{5, 3}, {8, 6}}));
}

TEST(Contour, SquareOutline) {
  const auto c = trace_contour(square_mask(10, 2, 2, 4));
  EXPECT_EQ(c.size(), 12u);
  for (const auto& p : c) EXPECT_TRUE(p.x == 2 || p.x == 5 || p.y == 2 || p.y == 5);
}

TEST(Contour, SinglePixel) {
  Mask m(5, 5);
  m.at(2, 2) = 1;
  EXPECT_EQ(trace_contour(m).size(), 1u);
}

TEST(Measurement, MmIsPxTimesSpacing) {
  const auto m = RecistMeasurement::from_endpoints({{0, 0}, {10, 0}, {5, -3}, {5, 3}}, MeasurementSource::Heatmap, 0.8);
  EXPECT_DOUBLE_EQ(m.long_mm, m.long_px * 0.8);
  EXPECT_DOUBLE_EQ(m.short_mm, 6.0 * 0.8);
  EXPECT_FALSE(m.degenerate);
}
