#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "geometry_oracles.hpp"
#include "meaformer/geometry/transform.hpp"
#include "meaformer/losses/losses.hpp"
#include "meaformer/numcore/grad_check.hpp"
#include "meaformer/numcore/ops.hpp"
#include "test_util.hpp"

using namespace meaformer;
using loss::LossTerms;
using loss::LossWeights;
using nc::Shape;
using nc::Tensor;
using testutil::random_tensor;

namespace {

Tensor<double> mask_tensor(const geom::Mask& m) {
  std::vector<double> v(m.values.begin(), m.values.end());
  return Tensor<double>(Shape{1, 1, m.height, m.width}, std::move(v));
}

// Keypoint in normalized units whose pixel position has a fractional part in
// [0.2, 0.8], so a 1e-3 finite-difference step never crosses the pixel grid.
double off_grid(nc::Rng& rng, int64_t size) {
  const double px = std::floor(rng.uniform(0.0, size - 2.0)) + rng.uniform(0.2, 0.8);
  return px / (size - 1.0);
}

Tensor<double> off_grid_points(Shape shape, int64_t size, nc::Rng& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = off_grid(rng, size);
  return t;
}

}  // namespace

TEST(SegLoss, PerfectPredictionIsZero) {
  const auto gt = mask_tensor(oracle::filled_ellipse(16, 16, 8, 8, 4, 3));
  const auto s = gt.clone();
  EXPECT_NEAR(loss::bce_loss(s, gt).item(), 0.0, 2e-6);
  EXPECT_NEAR(loss::iou_loss(s, gt).item(), 0.0, 1e-12);
}

TEST(SegLoss, HalfProbabilityGivesLn2) {
  geom::Mask half(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 4; ++c) half.at(r, c) = 1;
  const auto gt = mask_tensor(half);
  const Tensor<double> s(gt.shape(), 0.5);
  EXPECT_NEAR(loss::bce_loss(s, gt).item(), std::numbers::ln2, 1e-12);
}

TEST(SegLoss, DisjointGivesIouOne) {
  geom::Mask a(8, 8), b(8, 8);
  a.at(1, 1) = 1;
  b.at(6, 6) = 1;
  EXPECT_NEAR(loss::iou_loss(mask_tensor(a), mask_tensor(b)).item(), 1.0, 1e-6);
}

TEST(SegLoss, EmptyGroundTruthIsGuarded) {
  const Tensor<double> gt(Shape{1, 1, 4, 4}, 0.0);
  EXPECT_NEAR(loss::iou_loss(gt, gt).item(), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(loss::seg_loss(Tensor<double>(gt.shape(), 0.3), gt).item()));
}

TEST(SegLoss, BatchAveragesPerSampleIou) {
  geom::Mask a(4, 4, 1), b(4, 4);
  b.at(0, 0) = 1;
  Tensor<double> s(Shape{2, 1, 4, 4}), g(Shape{2, 1, 4, 4});
  for (int i = 0; i < 16; ++i) {
    s.data()[i] = 1.0;                 // sample 0: perfect
    g.data()[i] = 1.0;
    s.data()[16 + i] = i == 5 ? 1 : 0;  // sample 1: disjoint
    g.data()[16 + i] = b.values[i];
  }
  EXPECT_NEAR(loss::iou_loss(s, g).item(), 0.5, 1e-6);
}

TEST(HeatmapLoss, Values) {
  nc::Rng rng(1);
  const auto gt = random_tensor({2, 4, 5, 5}, rng, 0, 1);
  EXPECT_EQ(loss::heatmap_loss(gt, gt).item(), 0.0);
  EXPECT_NEAR(loss::heatmap_loss(nc::add_scalar(gt, 0.1), gt).item(), 0.01, 1e-12);
  const auto m = random_tensor({2, 4, 5, 5}, rng);
  double ref = 0;
  for (int64_t i = 0; i < m.numel(); ++i) ref += std::pow(m.data()[i] - gt.data()[i], 2);
  EXPECT_NEAR(loss::heatmap_loss(m, gt).item(), ref / m.numel(), 1e-12);
}

TEST(RegressionLoss, Values) {
  const Tensor<double> gt(Shape{1, 2, 2}, {0.2, 0.3, 0.6, 0.7});
  EXPECT_EQ(loss::regression_loss<double>({gt, gt}, gt).item(), 0.0);
  // one keypoint off by (0.1, 0) in a single-keypoint layer: 0.05
  const Tensor<double> g1(Shape{1, 1, 2}, {0.5, 0.5});
  const Tensor<double> p1(Shape{1, 1, 2}, {0.6, 0.5});
  EXPECT_NEAR(loss::regression_loss<double>({p1}, g1).item(), 0.05, 1e-12);
  const Tensor<double> p2(Shape{1, 1, 2}, {0.53, 0.53});
  EXPECT_NEAR(loss::regression_loss<double>({p1, p2}, g1).item(), 0.08, 1e-12);
}

TEST(BilinearSample, MatchesGeometrySampler) {
  nc::Rng rng(2);
  const auto planes = random_tensor({1, 3, 9, 7}, rng);
  const auto pts = random_tensor({1, 3, 2}, rng, 0, 1);
  const auto out = loss::bilinear_sample(planes, pts);
  for (int k = 0; k < 3; ++k) {
    geom::Plane p(9, 7);
    for (int i = 0; i < 63; ++i) p.values[i] = planes.data()[k * 63 + i];
    const double ref = geom::sample_bilinear(p, pts.data()[2 * k] * 6, pts.data()[2 * k + 1] * 8);
    EXPECT_NEAR(out.data()[k], ref, 1e-12);
  }
}

TEST(Cons1, KeypointOnUnitPixelIsZero) {
  Tensor<double> m(Shape{1, 1, 8, 8}, 0.0);
  m.data()[3 * 8 + 5] = 1.0;
  const Tensor<double> kp(Shape{1, 1, 2}, {5.0 / 7.0, 3.0 / 7.0});
  EXPECT_NEAR(loss::cons1_loss(m, kp).item(), 0.0, 1e-12);
}

TEST(Cons1, MidwayBetweenOneAndZero) {
  Tensor<double> m(Shape{1, 1, 8, 8}, 0.0);
  m.data()[3 * 8 + 5] = 1.0;
  const Tensor<double> kp(Shape{1, 1, 2}, {5.5 / 7.0, 3.0 / 7.0});
  EXPECT_NEAR(loss::cons1_loss(m, kp).item(), 0.5, 1e-12);
}

TEST(Cons1, AllZeroHeatmapsGiveOne) {
  nc::Rng rng(3);
  const Tensor<double> m(Shape{2, 4, 8, 8}, 0.0);
  EXPECT_NEAR(loss::cons1_loss(m, random_tensor({2, 4, 2}, rng, 0, 1)).item(), 1.0, 1e-12);
}

TEST(Cons1, LocalityOfSampling) {
  nc::Rng rng(4);
  auto m = random_tensor({1, 2, 16, 16}, rng, 0, 1);
  const Tensor<double> kp(Shape{1, 2, 2}, {4.3 / 15, 6.6 / 15, 10.2 / 15, 11.9 / 15});
  const double before = loss::cons1_loss(m, kp).item();
  for (int k = 0; k < 2; ++k) {
    const double x = kp.data()[2 * k] * 15, y = kp.data()[2 * k + 1] * 15;
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        if (std::abs(c - x) > 1 || std::abs(r - y) > 1) m.data()[k * 256 + r * 16 + c] = rng.uniform(-5, 5);
  }
  EXPECT_NEAR(loss::cons1_loss(m, kp).item(), before, 1e-14);
}

TEST(Cons2, BoundaryKeypointIsZero) {
  const geom::Mask disk = oracle::filled_ellipse(32, 32, 16, 16, 10, 10);
  const auto s = mask_tensor(disk);
  const Tensor<double> kp(Shape{1, 1, 2}, {26.0 / 31.0, 16.0 / 31.0});
  const auto r = loss::cons2_loss(s, kp);
  EXPECT_EQ(r.skipped, 0);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-12);
}

TEST(Cons2, DiskCenterIsRadius) {
  const geom::Mask disk = oracle::filled_ellipse(32, 32, 16, 16, 10, 10);
  const Tensor<double> kp(Shape{1, 1, 2}, {16.0 / 31.0, 16.0 / 31.0});
  const double v = loss::cons2_loss(mask_tensor(disk), kp).loss.item();
  EXPECT_NEAR(v, oracle::brute_distance_map(disk).at(16, 16), 1e-12);
  // nearest boundary pixel of the rasterized disk sits at sqrt(82)
  EXPECT_NEAR(v, 10.0, 1.0);
}

TEST(Cons2, EmptyMaskIsSkippedAndFlagged) {
  const Tensor<double> s(Shape{2, 1, 8, 8}, 0.2);
  nc::Rng rng(5);
  const auto r = loss::cons2_loss(s, random_tensor({2, 4, 2}, rng, 0, 1));
  EXPECT_EQ(r.skipped, 2);
  EXPECT_EQ(r.loss.item(), 0.0);
}

TEST(Cons2, SkipsOnlyEmptySamples) {
  Tensor<double> s(Shape{2, 1, 8, 8}, 0.0);
  for (int i = 0; i < 64; ++i) s.data()[64 + i] = 1.0;  // second sample all foreground
  const Tensor<double> kp(Shape{2, 1, 2}, {0.5, 0.5, 0.0, 0.0});
  const auto r = loss::cons2_loss(s, kp);
  EXPECT_EQ(r.skipped, 1);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-12);  // corner pixel lies on the image-edge boundary
}

TEST(TotalLoss, WeightedSum) {
  LossTerms<double> t;
  t.seg = Tensor<double>::scalar(0.2);
  t.heatmap = Tensor<double>::scalar(0.01);
  t.regression = Tensor<double>::scalar(0.1);
  t.cons1 = Tensor<double>::scalar(0.5);
  t.cons2 = Tensor<double>::scalar(2.0);
  EXPECT_NEAR(loss::total_loss(t, LossWeights{}).item(), 0.425, 1e-15);
  LossWeights doubled;
  doubled.heatmap *= 2;
  EXPECT_NEAR(loss::total_loss(t, doubled).item() - loss::total_loss(t, LossWeights{}).item(), 0.1, 1e-15);
}

TEST(TotalLoss, DefaultWeightsAndZeros) {
  const LossWeights w;
  EXPECT_EQ(w, (LossWeights{1.0, 10.0, 1.0, 0.01, 0.01}));
  LossTerms<double> t;
  for (auto* p : {&t.seg, &t.heatmap, &t.regression, &t.cons1, &t.cons2}) *p = Tensor<double>::scalar(0.0);
  EXPECT_EQ(loss::total_loss(t, w).item(), 0.0);
  EXPECT_THROW((LossWeights{-1, 0, 0, 0, 0}.validate()), std::invalid_argument);
}

TEST(TotalLoss, StepOneOmitsConsistency) {
  nc::Rng rng(6);
  loss::Prediction<double> p{random_tensor({1, 1, 8, 8}, rng, 0.1, 0.9), random_tensor({1, 2, 8, 8}, rng),
                             {random_tensor({1, 2, 2}, rng, 0, 1)}};
  loss::Supervision<double> s{Tensor<double>(Shape{1, 1, 8, 8}, 1.0), random_tensor({1, 2, 8, 8}, rng),
                              random_tensor({1, 2, 2}, rng, 0, 1)};
  const auto t = loss::compute_losses(p, s, LossWeights{}, false);
  EXPECT_FALSE(t.cons1.defined());
  EXPECT_FALSE(t.cons2.defined());
  EXPECT_NEAR(t.total.item(), t.seg.item() + 10 * t.heatmap.item() + t.regression.item(), 1e-12);
}

TEST(LossProperties, NonNegative) {
  nc::Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_tensor({2, 1, 8, 8}, rng, 0.01, 0.99);
    const auto g = nc::Tensor<double>(s.shape(), rng.bernoulli(0.5) ? 1.0 : 0.0);
    EXPECT_GE(loss::seg_loss(s, g).item(), 0.0);
    const auto m = random_tensor({2, 4, 8, 8}, rng);
    EXPECT_GE(loss::heatmap_loss(m, random_tensor({2, 4, 8, 8}, rng)).item(), 0.0);
    EXPECT_GE(loss::cons1_loss(m, random_tensor({2, 4, 2}, rng, 0, 1)).item(), 0.0);
  }
}

TEST(LossGradients, SegAndHeatmap) {
  nc::Rng rng(8);
  auto s = random_tensor({2, 1, 6, 6}, rng, 0.05, 0.95);
  Tensor<double> g(s.shape());
  for (auto& v : g.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  EXPECT_LT(nc::grad_check([&] { return loss::seg_loss(s, g); }, {s}).max_relative_error, 1e-4);
  auto m = random_tensor({2, 4, 6, 6}, rng);
  const auto gt = random_tensor({2, 4, 6, 6}, rng);
  EXPECT_LT(nc::grad_check([&] { return loss::heatmap_loss(m, gt); }, {m}).max_relative_error, 1e-4);
}

TEST(LossGradients, Regression) {
  nc::Rng rng(9);
  std::vector<Tensor<double>> layers{random_tensor({2, 4, 2}, rng, 0, 1), random_tensor({2, 4, 2}, rng, 0, 1)};
  const auto gt = random_tensor({2, 4, 2}, rng, 0, 1);
  const auto res = nc::grad_check([&] { return loss::regression_loss(layers, gt); }, layers);
  EXPECT_LT(res.max_relative_error, 1e-4);
}

TEST(LossGradients, Cons1ToHeatmapsAndKeypoints) {
  nc::Rng rng(10);
  auto m = random_tensor({2, 4, 12, 12}, rng, 0.0, 0.8);
  auto kp = off_grid_points({2, 4, 2}, 12, rng);
  const auto res = nc::grad_check([&] { return loss::cons1_loss(m, kp); }, {m, kp});
  EXPECT_LT(res.max_relative_error, 1e-4);
}

TEST(LossGradients, Cons2ToKeypoints) {
  nc::Rng rng(11);
  Tensor<double> s(Shape{2, 1, 32, 32});
  for (int b = 0; b < 2; ++b) {
    const auto blob = oracle::random_blob(32, rng);
    for (int i = 0; i < 1024; ++i) s.data()[b * 1024 + i] = blob.values[i] ? 0.9 : 0.1;
  }
  auto kp = off_grid_points({2, 4, 2}, 32, rng);
  const auto res = nc::grad_check([&] { return loss::cons2_loss(s, kp).loss; }, {kp});
  EXPECT_LT(res.max_relative_error, 1e-4);
  kp.zero_grad();
  loss::cons2_loss(s, kp).loss.backward();
  double norm = 0;
  for (double v : kp.grad()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(LossGradients, Cons2BlocksSegmentationGradient) {
  nc::Rng rng(12);
  auto s = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
  s.set_requires_grad(true);
  auto kp = off_grid_points({1, 2, 2}, 8, rng);
  loss::cons2_loss(s, kp).loss.backward();
  EXPECT_FALSE(s.has_grad());
}

TEST(LossGradients, TotalLossFloatMatchesDouble) {
  nc::Rng rng(13);
  const auto s = random_tensor({1, 1, 8, 8}, rng, 0.1, 0.9);
  const auto g = Tensor<double>(s.shape(), 1.0);
  auto to_float = [](const Tensor<double>& t) {
    return Tensor<float>(t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
  };
  EXPECT_NEAR(loss::seg_loss(to_float(s), to_float(g)).item(), loss::seg_loss(s, g).item(), 1e-5);
}
