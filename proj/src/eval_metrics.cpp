#include "decorfuse/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "decorfuse/error.hpp"

namespace decorfuse {

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  std::array<Vec2, 4> out{};
  for (int k = 0; k < 4; ++k)
    out[k] = {b.cx + c * local[k][0] - s * local[k][1], b.cy + s * local[k][0] + c * local[k][1]};
  return out;
}

double polygon_area(std::span<const Vec2> poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - p.y * q.x;
  }
  return 0.5 * std::abs(a);
}

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    auto side = [&](const Vec2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    std::vector<Vec2> next;
    next.reserve(out.size() + 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Vec2 p = out[i];
      const Vec2 q = out[(i + 1) % out.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) next.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    out = std::move(next);
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const auto poly = clip_convex(ca, cb);
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.l * a.w + b.l * b.w - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double rotated_iou_3d(const Box3D& a, const Box3D& b) {
  const double zlo = std::max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h);
  const double zhi = std::min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h);
  const double dz = zhi - zlo;
  if (dz <= 0.0) return 0.0;
  const double area = bev_intersection_area(a, b);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_threshold(ClassPreset preset) {
  switch (preset) {
    case ClassPreset::vehicle: return 0.7;
    case ClassPreset::pedestrian: return 0.5;
  }
  return 0.7;
}

ClassPreset class_preset_from_string(const std::string& name) {
  if (name == "vehicle") return ClassPreset::vehicle;
  if (name == "pedestrian") return ClassPreset::pedestrian;
  throw Error(ErrorKind::InvalidConfig, "unknown class preset '" + name + "'");
}

MatchResult match_detections(std::span<const FrameResult> frames, int class_id, double iou_thr,
                             bool use_3d) {
  struct Ref {
    std::size_t frame, det;
    double score;
  };
  std::vector<Ref> refs;
  MatchResult m;
  m.gt_matched.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t d = 0; d < frames[f].detections.size(); ++d)
      if (frames[f].detections[d].class_id == class_id)
        refs.push_back({f, d, frames[f].detections[d].score});
    m.gt_matched[f].assign(frames[f].ground_truth.size(), false);
    for (const auto& g : frames[f].ground_truth)
      if (g.class_id == class_id) ++m.num_gt;
  }
  std::stable_sort(refs.begin(), refs.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });
  for (const auto& r : refs) {
    const auto& det = frames[r.frame].detections[r.det];
    const auto& gts = frames[r.frame].ground_truth;
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != class_id || m.gt_matched[r.frame][g]) continue;
      const double iou = use_3d ? rotated_iou_3d(det.box, gts[g].box) : bev_iou(det.box, gts[g].box);
      if (iou >= iou_thr && iou > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) m.gt_matched[r.frame][best] = true;
    m.scores.push_back(r.score);
    m.true_positive.push_back(best >= 0);
  }
  return m;
}

double ap_40(const MatchResult& m) {
  if (m.num_gt == 0) return 0.0;
  const std::size_t n = m.true_positive.size();
  // Best precision among points with at least `tp` true positives, for each tp.
  std::vector<double> best_at_tp(m.num_gt + 1, 0.0);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (m.true_positive[k]) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    best_at_tp[tp] = std::max(best_at_tp[tp], precision);
  }
  for (std::size_t t = m.num_gt; t-- > 0;) best_at_tp[t] = std::max(best_at_tp[t], best_at_tp[t + 1]);
  double sum = 0.0;
  for (std::size_t r = 1; r <= 40; ++r) {
    // smallest tp with tp / num_gt >= r / 40, in exact integer arithmetic
    const std::size_t need = (r * m.num_gt + 39) / 40;
    if (need <= m.num_gt) sum += best_at_tp[need];
  }
  return sum / 40.0;
}

double ap_40(std::span<const FrameResult> frames, int class_id, double iou_thr, bool use_3d) {
  return ap_40(match_detections(frames, class_id, iou_thr, use_3d));
}

double ap_40(std::span<const Detection> dets, std::span<const LabeledBox> gts, double iou_thr,
             int class_id) {
  FrameResult f{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return ap_40(std::span<const FrameResult>(&f, 1), class_id, iou_thr, true);
}

double classification_accuracy(std::span<const FrameResult> frames, double iou_thr) {
  std::size_t total = 0, correct = 0;
  for (const auto& f : frames) {
    for (const auto& g : f.ground_truth) {
      ++total;
      const Detection* best = nullptr;
      for (const auto& d : f.detections)
        if (bev_iou(d.box, g.box) >= iou_thr && (!best || d.score > best->score)) best = &d;
      if (best && best->class_id == g.class_id) ++correct;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace decorfuse
