#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "decorfuse/detect_loss.hpp"

namespace decorfuse {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Footprint corners, counter-clockwise.
std::array<Vec2, 4> bev_corners(const Box3D& b);

double polygon_area(std::span<const Vec2> poly);

/// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

double bev_intersection_area(const Box3D& a, const Box3D& b);
double bev_iou(const Box3D& a, const Box3D& b);
double rotated_iou_3d(const Box3D& a, const Box3D& b);

enum class ClassPreset { vehicle, pedestrian };

/// Matching threshold per preset: vehicle 0.7, pedestrian 0.5.
double iou_threshold(ClassPreset preset);
ClassPreset class_preset_from_string(const std::string& name);

struct FrameResult {
  std::vector<Detection> detections;
  std::vector<LabeledBox> ground_truth;
};

/// Detections in evaluation order (score descending, input order on ties).
struct MatchResult {
  std::vector<double> scores;
  std::vector<bool> true_positive;
  std::vector<std::vector<bool>> gt_matched;  // per frame, per GT of the class
  std::size_t num_gt = 0;
};

MatchResult match_detections(std::span<const FrameResult> frames, int class_id,
                             double iou_thr, bool use_3d = true);

/// Average precision sampled at recall 1/40, 2/40, ..., 1. Zero when the
/// class has no ground truth.
double ap_40(const MatchResult& match);
double ap_40(std::span<const FrameResult> frames, int class_id, double iou_thr, bool use_3d = true);
double ap_40(std::span<const Detection> dets, std::span<const LabeledBox> gts, double iou_thr,
             int class_id);

/// Fraction of GT objects whose best-scoring detection with BEV IoU >= thr
/// (any class) carries the correct class. Undetected objects count as wrong.
double classification_accuracy(std::span<const FrameResult> frames, double iou_thr);

}  // namespace decorfuse
