#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decorfuse/query_fusion.hpp"
#include "decorfuse/tensor.hpp"
#include "decorfuse/voxel.hpp"

namespace decorfuse {

/// Oriented box: center (m), extents (m), yaw about +z (rad) in (-pi, pi].
/// l runs along the heading direction, w across it, h vertically.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;

  bool operator==(const Box3D&) const = default;
};

struct LabeledBox {
  Box3D box;
  int class_id = 0;

  bool operator==(const LabeledBox&) const = default;
};

double normalize_yaw(double yaw);

/// Placement of the BEV grid in the lidar frame.
struct BevGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_x = 1.0;
  double cell_y = 1.0;
  int nx = 0;
  int ny = 0;

  /// BEV after `downsample`-fold striding of the voxel grid.
  static BevGeometry from_grid(const VoxelGridSpec& spec, int downsample);
};

/// Sub-cell center offsets (cells), z (m), log extents, sin/cos yaw.
struct RegressionTarget {
  double dx = 0.0, dy = 0.0, z = 0.0;
  double log_l = 0.0, log_w = 0.0, log_h = 0.0;
  double sin_yaw = 0.0, cos_yaw = 1.0;

  static constexpr int kSize = 8;
  std::array<double, kSize> to_array() const {
    return {dx, dy, z, log_l, log_w, log_h, sin_yaw, cos_yaw};
  }
  static RegressionTarget from_array(std::span<const double> v);
};

RegressionTarget encode_box(const Box3D& box, int i, int j, const BevGeometry& geom);
Box3D decode_box(int i, int j, const RegressionTarget& reg, const BevGeometry& geom);

/// Per-class Gaussian splats exp(-(di^2 + dj^2) / (2 sigma^2)) around each
/// object's center cell, sigma = max(footprint_radius_cells / 3, 1); overlaps
/// take the elementwise max.
Grid2D gaussian_heatmap_target(std::span<const LabeledBox> gt, const BevGeometry& geom,
                               int num_classes);

/// Penalty-reduced focal loss (alpha = 2, beta = 4), normalized by the number
/// of target == 1 cells (at least 1). Optional gradient w.r.t. pred.
double heatmap_focal_loss(const Grid2D& pred, const Grid2D& target, Grid2D* grad = nullptr,
                          double alpha = 2.0, double beta = 4.0);

/// Sigmoid focal loss on logits (gamma = 2, alpha = 0.25), summed and divided
/// by max(1, normalizer). Optional gradient w.r.t. logits.
double sigmoid_focal_loss(const Matrix& logits, const Matrix& targets, double normalizer,
                          Matrix* grad = nullptr, double alpha = 0.25, double gamma = 2.0);

/// Mean over components of 0.5 d^2 (|d| < 1) or |d| - 0.5.
double smooth_l1(std::span<const double> pred, std::span<const double> target,
                 std::vector<double>* grad = nullptr);

struct Assignment {
  int gt_index = -1;  // -1: background
  RegressionTarget target;
};

/// Nearest same-class GT center within `radius_cells` of the query cell center.
/// Ties go to the GT whose center cell is first in row-major order.
std::vector<Assignment> assign_targets(std::span<const ObjectQuery> queries,
                                       std::span<const LabeledBox> gt, const BevGeometry& geom,
                                       double radius_cells = 2.0);

struct LossReport {
  double l_heatmap = 0.0;
  double l_query = 0.0;
  double l_cls = 0.0;
  double l_reg = 0.0;
  double w = 2.0;
  double total = 0.0;
};

LossReport total_loss(double heatmap_term, double query_term, double regression_term,
                      double w = 2.0);

/// Dense(in -> hidden) -> ReLU -> Dense(hidden -> K + 8): class logits then
/// the regression vector.
struct DetectionHead {
  Dense hidden;
  Dense out;

  static DetectionHead init(int in_features, int hidden_units, int num_classes, Rng& rng);
  DetectionHead zeros_like() const { return {hidden.zeros_like(), out.zeros_like()}; }
  int num_classes() const { return out.out_features - RegressionTarget::kSize; }
};

struct DetectionHeadTape {
  Matrix input, pre, act;
};

Matrix detection_head_forward(const Matrix& x, const DetectionHead& head,
                              DetectionHeadTape* tape = nullptr);
Matrix detection_head_backward(const DetectionHeadTape& tape, const DetectionHead& head,
                               const Matrix& cotangent, DetectionHead& grads);

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box3D box;
};

/// Greedy by descending score (stable in input order); drops any detection
/// whose rotated BEV IoU with a kept one exceeds the threshold.
std::vector<Detection> bev_nms(std::span<const Detection> dets, double iou_threshold);

}  // namespace decorfuse
