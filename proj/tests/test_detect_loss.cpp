#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "decorfuse/detect_loss.hpp"
#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"
#include "decorfuse/gradcheck.hpp"

using namespace decorfuse;

namespace {

BevGeometry desk_bev() { return BevGeometry::from_grid(VoxelGridSpec::desk(), 4); }

Box3D box_at(double x, double y, double l = 4.0, double w = 1.8, double yaw = 0.0) {
  return {x, y, -1.0, l, w, 1.6, yaw};
}

}  // namespace

TEST(BevGeometry, DeskDownsample) {
  const BevGeometry g = desk_bev();
  EXPECT_EQ(g.nx, 16);
  EXPECT_EQ(g.ny, 16);
  EXPECT_EQ(g.cell_x, 2.0);
  EXPECT_EQ(g.origin_y, -16.0);
}

TEST(GaussianTarget, EmptyAndPeak) {
  const BevGeometry g = desk_bev();
  const Grid2D empty = gaussian_heatmap_target({}, g, 2);
  for (double v : empty.data) EXPECT_EQ(v, 0.0);
  const std::vector<LabeledBox> gt{{box_at(9.0, 1.0), 1}};
  const Grid2D t = gaussian_heatmap_target(gt, g, 2);
  // (9 - 0) / 2 = 4.5 -> cell 4; (1 + 16) / 2 = 8.5 -> cell 8
  EXPECT_EQ(t.at(4, 8, 1), 1.0);
  EXPECT_EQ(t.at(4, 8, 0), 0.0);
  EXPECT_LT(t.at(5, 8, 1), 1.0);
  EXPECT_GT(t.at(5, 8, 1), 0.0);
}

TEST(GaussianTarget, OverlapTakesElementwiseMax) {
  const BevGeometry g = desk_bev();
  const LabeledBox a{box_at(9.0, 1.0), 0}, b{box_at(13.0, 3.0), 0};
  const Grid2D ta = gaussian_heatmap_target(std::vector{a}, g, 1);
  const Grid2D tb = gaussian_heatmap_target(std::vector{b}, g, 1);
  const Grid2D tab = gaussian_heatmap_target(std::vector{a, b}, g, 1);
  for (std::size_t i = 0; i < tab.data.size(); ++i) EXPECT_EQ(tab.data[i], std::max(ta.data[i], tb.data[i]));
  EXPECT_THROW(gaussian_heatmap_target(std::vector{LabeledBox{box_at(9, 1), 2}}, g, 2), Error);
}

TEST(HeatmapFocal, SinglePositiveHalf) {
  Grid2D pred(1, 1, 1, 0.5), target(1, 1, 1, 1.0);
  EXPECT_NEAR(heatmap_focal_loss(pred, target), 0.173287, 1e-6);
}

TEST(HeatmapFocal, PerfectPredictionLimitAndMonotone) {
  Grid2D target(3, 3, 1, 0.0);
  target.at(1, 1, 0) = 1.0;
  Grid2D pred(3, 3, 1, 1e-9);
  pred.at(1, 1, 0) = 1.0 - 1e-9;
  EXPECT_LT(heatmap_focal_loss(pred, target), 1e-12);
  double prev = 1e9;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    const double l = heatmap_focal_loss(Grid2D(1, 1, 1, p), Grid2D(1, 1, 1, 1.0));
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_THROW(heatmap_focal_loss(Grid2D(1, 2, 1), Grid2D(2, 1, 1)), Error);
}

TEST(HeatmapFocal, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Grid2D target(4, 4, 2);
  for (double& t : target.data) t = rng.uniform(0, 0.9);
  target.at(1, 2, 0) = 1.0;
  target.at(3, 0, 1) = 1.0;
  Grid2D pred(4, 4, 2);
  for (double& p : pred.data) p = rng.uniform(0.05, 0.95);
  Grid2D grad;
  heatmap_focal_loss(pred, target, &grad);
  const auto num = numeric_gradient(pred.data, [&] { return heatmap_focal_loss(pred, target); });
  EXPECT_LT(gradient_error(grad.data, num), 1e-6);
}

TEST(SigmoidFocal, HandValuesAndGradient) {
  Matrix z(1, 2, 0.0), t(1, 2);
  t(0, 0) = 1.0;
  const double ln2 = std::numbers::ln2;
  EXPECT_NEAR(sigmoid_focal_loss(z, t, 1.0), 0.25 * 0.25 * ln2 + 0.75 * 0.25 * ln2, 1e-15);
  EXPECT_NEAR(sigmoid_focal_loss(z, t, 4.0), (0.25 + 0.75) * 0.25 * ln2 / 4.0, 1e-15);
  Rng rng(2);
  Matrix logits(5, 3), targets(5, 3);
  for (double& v : logits.data) v = rng.uniform(-3, 3);
  for (int r = 0; r < 5; ++r) targets(r, static_cast<int>(rng.below(3))) = 1.0;
  Matrix grad;
  sigmoid_focal_loss(logits, targets, 2.0, &grad);
  const auto num = numeric_gradient(logits.data, [&] { return sigmoid_focal_loss(logits, targets, 2.0); });
  EXPECT_LT(gradient_error(grad.data, num), 1e-6);
}

TEST(SmoothL1, ClosedForms) {
  EXPECT_EQ(smooth_l1(std::vector{1.0, 2.0}, std::vector{1.0, 2.0}), 0.0);
  EXPECT_EQ(smooth_l1(std::vector{0.5}, std::vector{0.0}), 0.125);
  EXPECT_EQ(smooth_l1(std::vector{2.0}, std::vector{0.0}), 1.5);
  EXPECT_EQ(smooth_l1(std::vector{0.5, 2.0}, std::vector{0.0, 0.0}), (0.125 + 1.5) / 2);
  EXPECT_EQ(smooth_l1(std::vector<double>{}, std::vector<double>{}), 0.0);
  try {
    smooth_l1(std::vector{1.0}, std::vector{1.0, 2.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
  }
}

TEST(SmoothL1, Gradient) {
  std::vector<double> p{0.3, -2.0, 1.7, -0.1}, t{0.0, 0.0, 0.0, 0.5};
  std::vector<double> g;
  smooth_l1(p, t, &g);
  EXPECT_EQ(g, (std::vector<double>{0.3 / 4, -0.25, 0.25, -0.6 / 4}));
}

TEST(TotalLoss, WeightedSum) {
  const LossReport r = total_loss(0.6, 0.4, 0.5);
  EXPECT_EQ(r.l_cls, 1.0);
  EXPECT_EQ(r.total, 2.0);
  EXPECT_EQ(r.total, r.l_cls + 2.0 * r.l_reg);
  EXPECT_EQ(total_loss(0.3, 0.2, 0.0).total, 0.5);
  EXPECT_EQ(total_loss(0.3, 0.2, 0.7, 0.0).total, 0.5);
}

TEST(Assign, CenterCellSameClass) {
  const BevGeometry g = desk_bev();
  const std::vector<LabeledBox> gt{{box_at(9.0, 1.0), 0}};
  const std::vector<ObjectQuery> qs{{4, 8, 0, 0.9}, {4, 8, 1, 0.9}, {9, 8, 0, 0.5}};
  const auto a = assign_targets(qs, gt, g);
  EXPECT_EQ(a[0].gt_index, 0);
  EXPECT_NEAR(a[0].target.dx, 0.0, 1e-15);
  EXPECT_NEAR(a[0].target.dy, 0.0, 1e-15);
  EXPECT_EQ(a[1].gt_index, -1);  // other class
  EXPECT_EQ(a[2].gt_index, -1);  // five cells away
}

TEST(Assign, EquidistantTieGoesToRowMajorFirst) {
  const BevGeometry g = desk_bev();
  // query cell (5, 8) center at continuous (5.5, 8.5); GTs one cell either side
  const std::vector<LabeledBox> gt{{box_at(13.0, 1.0), 0}, {box_at(9.0, 1.0), 0}};
  const std::vector<ObjectQuery> qs{{5, 8, 0, 0.5}};
  EXPECT_EQ(assign_targets(qs, gt, g)[0].gt_index, 1);
}

TEST(Assign, EachGtMayMatchManyQueries) {
  const BevGeometry g = desk_bev();
  const std::vector<LabeledBox> gt{{box_at(9.0, 1.0), 0}};
  const std::vector<ObjectQuery> qs{{4, 8, 0, 0.9}, {5, 8, 0, 0.5}, {4, 9, 0, 0.5}};
  for (const auto& a : assign_targets(qs, gt, g)) EXPECT_EQ(a.gt_index, 0);
}

TEST(EncodeDecode, RoundTripProperty) {
  const BevGeometry g = desk_bev();
  Rng rng(3);
  for (int n = 0; n < 1000; ++n) {
    const int i = static_cast<int>(rng.below(16)), j = static_cast<int>(rng.below(16));
    const Box3D b{g.origin_x + (i + rng.uniform()) * g.cell_x, g.origin_y + (j + rng.uniform()) * g.cell_y,
                  rng.uniform(-2, 2), rng.uniform(0.5, 5), rng.uniform(0.5, 3), rng.uniform(0.5, 2),
                  rng.uniform(-3.1, 3.1)};
    const Box3D d = decode_box(i, j, encode_box(b, i, j, g), g);
    EXPECT_NEAR(d.cx, b.cx, 1e-9);
    EXPECT_NEAR(d.cy, b.cy, 1e-9);
    EXPECT_NEAR(d.cz, b.cz, 1e-9);
    EXPECT_NEAR(d.l, b.l, 1e-9);
    EXPECT_NEAR(d.w, b.w, 1e-9);
    EXPECT_NEAR(d.h, b.h, 1e-9);
    EXPECT_NEAR(d.yaw, b.yaw, 1e-9);
  }
}

TEST(EncodeDecode, ZeroVectorIsUnitBoxAtCellCenter) {
  const BevGeometry g = desk_bev();
  RegressionTarget r;
  r.sin_yaw = 0.0;
  r.cos_yaw = 1.0;
  const Box3D b = decode_box(3, 5, r, g);
  EXPECT_EQ(b, (Box3D{7.0, -5.0, 0.0, 1.0, 1.0, 1.0, 0.0}));
  EXPECT_THROW(RegressionTarget::from_array(std::vector<double>(7)), Error);
}

TEST(DetectionHead, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  DetectionHead head = DetectionHead::init(5, 6, 2, rng);
  for (double& b : head.hidden.bias) b = rng.uniform(0.1, 0.3);
  Matrix x(3, 5);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  DetectionHeadTape tape;
  const Matrix out = detection_head_forward(x, head, &tape);
  EXPECT_EQ(out.cols, 2 + RegressionTarget::kSize);
  Matrix cot(out.rows, out.cols);
  for (double& v : cot.data) v = rng.uniform(-1, 1);
  DetectionHead grads = head.zeros_like();
  const Matrix gx = detection_head_backward(tape, head, cot, grads);
  auto loss = [&] {
    const Matrix o = detection_head_forward(x, head);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * cot.data[i];
    return s;
  };
  EXPECT_LT(gradient_error(gx.data, numeric_gradient(x.data, loss)), 1e-6);
  EXPECT_LT(gradient_error(grads.hidden.weight, numeric_gradient(head.hidden.weight, loss)), 1e-6);
  EXPECT_LT(gradient_error(grads.out.weight, numeric_gradient(head.out.weight, loss)), 1e-6);
}

TEST(Nms, IdenticalAndDisjoint) {
  const std::vector<Detection> same{{0, 0.8, box_at(5, 0)}, {0, 0.9, box_at(5, 0)}};
  const auto kept = bev_nms(same, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
  const std::vector<Detection> apart{{0, 0.8, box_at(5, 0)}, {1, 0.9, box_at(15, 0)}, {0, 0.1, box_at(25, 5)}};
  EXPECT_EQ(bev_nms(apart, 0.5).size(), 3u);
}

TEST(Nms, MatchesReferenceScan) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    for (int n = 0; n < 12; ++n)
      dets.push_back({0, std::floor(rng.uniform() * 4) / 4,
                      box_at(rng.uniform(0, 6), rng.uniform(0, 6), 4.0, 1.8, rng.uniform(-3, 3))});
    // O(n^2) reference: repeatedly take the best remaining, tie to lowest index.
    std::vector<bool> alive(dets.size(), true);
    std::vector<Detection> want;
    for (;;) {
      int best = -1;
      for (std::size_t k = 0; k < dets.size(); ++k)
        if (alive[k] && (best < 0 || dets[k].score > dets[best].score)) best = static_cast<int>(k);
      if (best < 0) break;
      alive[best] = false;
      want.push_back(dets[best]);
      for (std::size_t k = 0; k < dets.size(); ++k)
        if (alive[k] && bev_iou(dets[best].box, dets[k].box) > 0.3) alive[k] = false;
    }
    const auto got = bev_nms(dets, 0.3);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].score, want[k].score);
      EXPECT_EQ(got[k].box, want[k].box);
    }
  }
}
