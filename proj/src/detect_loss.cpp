#include "decorfuse/detect_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "decorfuse/error.hpp"
#include "decorfuse/eval_metrics.hpp"

namespace decorfuse {

double normalize_yaw(double yaw) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(yaw, two_pi);
  if (y <= -std::numbers::pi) y += two_pi;
  if (y > std::numbers::pi) y -= two_pi;
  return y;
}

BevGeometry BevGeometry::from_grid(const VoxelGridSpec& spec, int downsample) {
  const auto dims = spec.dims();
  BevGeometry g;
  g.origin_x = spec.lo[0];
  g.origin_y = spec.lo[1];
  g.cell_x = spec.voxel_size[0] * downsample;
  g.cell_y = spec.voxel_size[1] * downsample;
  g.nx = dims[0];
  g.ny = dims[1];
  for (int d = downsample; d > 1; d /= 2) {
    g.nx = (g.nx + 1) / 2;
    g.ny = (g.ny + 1) / 2;
  }
  return g;
}

RegressionTarget RegressionTarget::from_array(std::span<const double> v) {
  if (v.size() != kSize) throw Error(ErrorKind::LengthMismatch, "regression vector");
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

RegressionTarget encode_box(const Box3D& box, int i, int j, const BevGeometry& geom) {
  RegressionTarget t;
  t.dx = (box.cx - geom.origin_x) / geom.cell_x - (i + 0.5);
  t.dy = (box.cy - geom.origin_y) / geom.cell_y - (j + 0.5);
  t.z = box.cz;
  t.log_l = std::log(box.l);
  t.log_w = std::log(box.w);
  t.log_h = std::log(box.h);
  t.sin_yaw = std::sin(box.yaw);
  t.cos_yaw = std::cos(box.yaw);
  return t;
}

Box3D decode_box(int i, int j, const RegressionTarget& r, const BevGeometry& geom) {
  Box3D b;
  b.cx = geom.origin_x + (i + 0.5 + r.dx) * geom.cell_x;
  b.cy = geom.origin_y + (j + 0.5 + r.dy) * geom.cell_y;
  b.cz = r.z;
  b.l = std::exp(r.log_l);
  b.w = std::exp(r.log_w);
  b.h = std::exp(r.log_h);
  b.yaw = std::atan2(r.sin_yaw, r.cos_yaw);
  return b;
}

namespace {

struct CellPos {
  double gx, gy;  // continuous cell coordinates
  int ci, cj;     // containing cell
};

CellPos cell_of(const Box3D& b, const BevGeometry& geom) {
  CellPos p;
  p.gx = (b.cx - geom.origin_x) / geom.cell_x;
  p.gy = (b.cy - geom.origin_y) / geom.cell_y;
  p.ci = static_cast<int>(std::floor(p.gx));
  p.cj = static_cast<int>(std::floor(p.gy));
  return p;
}

}  // namespace

Grid2D gaussian_heatmap_target(std::span<const LabeledBox> gt, const BevGeometry& geom,
                               int num_classes) {
  Grid2D target(geom.nx, geom.ny, num_classes);
  for (const auto& obj : gt) {
    if (obj.class_id < 0 || obj.class_id >= num_classes)
      throw Error(ErrorKind::BadClass, "GT class outside [0, K)");
    const auto c = cell_of(obj.box, geom);
    const double radius =
        0.5 * std::hypot(obj.box.l / geom.cell_x, obj.box.w / geom.cell_y);
    const double sigma = std::max(radius / 3.0, 1.0);
    const double denom = 2.0 * sigma * sigma;
    for (int i = 0; i < geom.nx; ++i)
      for (int j = 0; j < geom.ny; ++j) {
        const double di = i - c.ci, dj = j - c.cj;
        const double v = std::exp(-(di * di + dj * dj) / denom);
        double& t = target.at(i, j, obj.class_id);
        t = std::max(t, v);
      }
  }
  return target;
}

namespace {

constexpr double kProbEps = 1e-12;

}  // namespace

double heatmap_focal_loss(const Grid2D& pred, const Grid2D& target, Grid2D* grad, double alpha,
                          double beta) {
  if (!pred.same_shape(target)) throw Error(ErrorKind::ShapeMismatch, "heatmap focal shapes");
  std::size_t positives = 0;
  for (double t : target.data)
    if (t == 1.0) ++positives;
  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(positives));
  if (grad) *grad = Grid2D(pred.height, pred.width, pred.channels);
  double loss = 0.0;
  for (std::size_t k = 0; k < pred.data.size(); ++k) {
    const double p = std::clamp(pred.data[k], kProbEps, 1.0 - kProbEps);
    const double t = target.data[k];
    double l, dl;
    if (t == 1.0) {
      const double om = 1.0 - p;
      l = -std::pow(om, alpha) * std::log(p);
      dl = alpha * std::pow(om, alpha - 1.0) * std::log(p) - std::pow(om, alpha) / p;
    } else {
      const double wneg = std::pow(1.0 - t, beta);
      const double lg = std::log1p(-p);
      l = -wneg * std::pow(p, alpha) * lg;
      dl = -wneg * (alpha * std::pow(p, alpha - 1.0) * lg - std::pow(p, alpha) / (1.0 - p));
    }
    loss += l;
    if (grad) grad->data[k] = dl * norm;
  }
  return loss * norm;
}

namespace {

// log(sigmoid(z)) = -softplus(-z)
double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

double sigmoid_focal_loss(const Matrix& logits, const Matrix& targets, double normalizer,
                          Matrix* grad, double alpha, double gamma) {
  if (logits.rows != targets.rows || logits.cols != targets.cols)
    throw Error(ErrorKind::ShapeMismatch, "focal loss shapes");
  const double norm = 1.0 / std::max(1.0, normalizer);
  if (grad) *grad = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.data.size(); ++k) {
    const double z = logits.data[k];
    const double p = sigmoid(z);
    const double log_p = log_sigmoid(z);
    const double log_1mp = log_sigmoid(-z);
    double l, dz;
    if (targets.data[k] > 0.5) {
      const double om = 1.0 - p;
      l = -alpha * std::pow(om, gamma) * log_p;
      dz = alpha * std::pow(om, gamma) * (gamma * p * log_p - om);
    } else {
      l = -(1.0 - alpha) * std::pow(p, gamma) * log_1mp;
      dz = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_1mp);
    }
    loss += l;
    if (grad) grad->data[k] = dz * norm;
  }
  return loss * norm;
}

double smooth_l1(std::span<const double> pred, std::span<const double> target,
                 std::vector<double>* grad) {
  if (pred.size() != target.size()) throw Error(ErrorKind::LengthMismatch, "smooth_l1 lengths");
  if (grad) grad->assign(pred.size(), 0.0);
  if (pred.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = pred[k] - target[k];
    const double ad = std::abs(d);
    if (ad < 1.0) {
      loss += 0.5 * d * d;
      if (grad) (*grad)[k] = d * inv_n;
    } else {
      loss += ad - 0.5;
      if (grad) (*grad)[k] = (d > 0 ? 1.0 : -1.0) * inv_n;
    }
  }
  return loss * inv_n;
}

std::vector<Assignment> assign_targets(std::span<const ObjectQuery> queries,
                                       std::span<const LabeledBox> gt, const BevGeometry& geom,
                                       double radius_cells) {
  std::vector<Assignment> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& query = queries[q];
    int best = -1;
    double best_d = 0.0;
    long best_rank = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt[g].class_id != query.class_id) continue;
      const auto c = cell_of(gt[g].box, geom);
      const double d = std::hypot(c.gx - (query.i + 0.5), c.gy - (query.j + 0.5));
      if (d > radius_cells) continue;
      const long rank = static_cast<long>(c.ci) * geom.ny + c.cj;
      if (best < 0 || d < best_d || (d == best_d && rank < best_rank)) {
        best = static_cast<int>(g);
        best_d = d;
        best_rank = rank;
      }
    }
    if (best >= 0) {
      out[q].gt_index = best;
      out[q].target = encode_box(gt[best].box, query.i, query.j, geom);
    }
  }
  return out;
}

LossReport total_loss(double heatmap_term, double query_term, double regression_term, double w) {
  LossReport r;
  r.l_heatmap = heatmap_term;
  r.l_query = query_term;
  r.l_cls = heatmap_term + query_term;
  r.l_reg = regression_term;
  r.w = w;
  r.total = r.l_cls + w * r.l_reg;
  return r;
}

DetectionHead DetectionHead::init(int in_features, int hidden_units, int num_classes, Rng& rng) {
  return {Dense::init(in_features, hidden_units, rng),
          Dense::init(hidden_units, num_classes + RegressionTarget::kSize, rng)};
}

Matrix detection_head_forward(const Matrix& x, const DetectionHead& head, DetectionHeadTape* tape) {
  Matrix pre = dense_forward(x, head.hidden);
  Matrix act = pre;
  for (double& v : act.data) v = v > 0.0 ? v : 0.0;
  Matrix out = dense_forward(act, head.out);
  if (tape) {
    tape->input = x;
    tape->pre = std::move(pre);
    tape->act = std::move(act);
  }
  return out;
}

Matrix detection_head_backward(const DetectionHeadTape& tape, const DetectionHead& head,
                               const Matrix& cot, DetectionHead& grads) {
  Matrix d_act = dense_backward(tape.act, head.out, cot, grads.out);
  for (std::size_t k = 0; k < d_act.data.size(); ++k)
    if (!(tape.pre.data[k] > 0.0)) d_act.data[k] = 0.0;
  return dense_backward(tape.input, head.hidden, d_act, grads.hidden);
}

std::vector<Detection> bev_nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (const auto& k : kept)
      if (bev_iou(k.box, dets[idx].box) > iou_threshold) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(dets[idx]);
  }
  return kept;
}

}  // namespace decorfuse
