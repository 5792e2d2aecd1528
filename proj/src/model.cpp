#include "decorfuse/model.hpp"

#include <algorithm>

#include "decorfuse/decoration.hpp"
#include "decorfuse/error.hpp"
#include "decorfuse/voxel.hpp"

namespace decorfuse {

Model Model::init(const Config& config, Rng& rng) {
  config.validate();
  Model m;
  m.backbone = Backbone2D::init(config.image_channels, rng);
  if (config.ablation.two_sparse_conv) {
    m.lidar_stream = SparseStream::init(4, config.stream_channels, rng);
    m.camera_stream = SparseStream::init(config.image_channels, config.stream_channels, rng);
  } else {
    m.lidar_stream = SparseStream::init(4 + config.image_channels, config.stream_channels, rng);
  }
  m.heatmap = HeatmapHead::init(config.fused_bev_channels(), config.heatmap_hidden,
                                config.num_classes, rng);
  m.attention = AttentionParams::init(config.query_dim(), config.camera_bev_channels(),
                                      config.d_model, config.fc_units, config.dropout_rate, rng);
  m.head = DetectionHead::init(config.fc_units + config.fused_bev_channels(), config.head_hidden,
                               config.num_classes, rng);
  return m;
}

Model Model::zeros_like() const {
  Model z;
  z.backbone = backbone.zeros_like();
  z.lidar_stream = lidar_stream.zeros_like();
  z.camera_stream = camera_stream.zeros_like();
  z.heatmap = heatmap.zeros_like();
  z.attention = attention.zeros_like();
  z.head = head.zeros_like();
  return z;
}

void Model::for_each_param(const ParamVisitor& fn) {
  backbone.for_each_param(fn);
  lidar_stream.for_each_param("lidar_stream", fn);
  camera_stream.for_each_param("camera_stream", fn);
  fn("heatmap.conv1.weight", heatmap.conv1.weight);
  fn("heatmap.conv1.bias", heatmap.conv1.bias);
  fn("heatmap.conv2.weight", heatmap.conv2.weight);
  fn("heatmap.conv2.bias", heatmap.conv2.bias);
  attention.for_each_param(fn);
  fn("head.hidden.weight", head.hidden.weight);
  fn("head.hidden.bias", head.hidden.bias);
  fn("head.out.weight", head.out.weight);
  fn("head.out.bias", head.out.bias);
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for_each_param([&](const std::string&, std::vector<double>& p) { n += p.size(); });
  return n;
}

namespace {

struct Tapes {
  Backbone2DTape backbone;
  Grid2D fmap;
  std::vector<SampleSite> sites;
  VoxelGroups groups;
  VoxelFeatures voxels;
  SparseTensor3D joint_input;
  SparseStreamTape lidar, camera;
  SparseTensor3D lidar_out, camera_out;
  Grid2D fused_bev, camera_bev;
  HeatmapTape heatmap;
  Matrix query_in;
  AttentionTape attention;
  Matrix attended;
  DetectionHeadTape head;
};

SparseTensor3D with_features(const SparseTensor3D& like, std::vector<double> features, int channels) {
  SparseTensor3D t;
  t.dims = like.dims;
  t.channels = channels;
  t.coords = like.coords;
  t.features = std::move(features);
  return t;
}

ForwardOutput forward(const Model& model, const Config& config, const SyntheticScene& scene,
                      bool training, std::uint64_t seed, Tapes& t) {
  const int c_img = config.image_channels;
  DecoratedCloud cloud;
  if (config.ablation.decoration) {
    t.fmap = backbone_forward(scene.image, model.backbone, &t.backbone);
    cloud = decorate(scene.points, t.fmap, scene.rig, scene.image.height, scene.image.width, &t.sites);
  } else {
    cloud = DecoratedCloud::undecorated(scene.points, c_img);
  }
  t.groups = voxelize(scene.points, config.grid, config.max_points_per_voxel);
  t.voxels = build_voxel_features(t.groups, cloud, config.grid);

  if (config.ablation.two_sparse_conv) {
    t.lidar_out = sparse_stream_forward(t.voxels.lidar, model.lidar_stream, &t.lidar);
    t.camera_out = sparse_stream_forward(t.voxels.camera, model.camera_stream, &t.camera);
    t.camera_bev = bev_flatten(t.camera_out);
    t.fused_bev = channel_concat(bev_flatten(t.lidar_out), t.camera_bev);
  } else {
    const auto& lid = t.voxels.lidar;
    const auto& cam = t.voxels.camera;
    std::vector<double> joint;
    joint.reserve(lid.size() * (4 + c_img));
    for (std::size_t r = 0; r < lid.size(); ++r) {
      const auto a = lid.row(r);
      const auto b = cam.row(r);
      joint.insert(joint.end(), a.begin(), a.end());
      joint.insert(joint.end(), b.begin(), b.end());
    }
    t.joint_input = with_features(lid, std::move(joint), 4 + c_img);
    t.lidar_out = sparse_stream_forward(t.joint_input, model.lidar_stream, &t.lidar);
    t.fused_bev = bev_flatten(t.lidar_out);
    t.camera_bev = t.fused_bev;
  }

  ForwardOutput out;
  out.heatmap = heatmap_head_forward(t.fused_bev, model.heatmap, &t.heatmap);
  out.queries = config.ablation.heatmap_init
                    ? select_queries(out.heatmap, config.queries_per_class)
                    : select_queries_topk(out.heatmap, config.queries_per_class * config.num_classes);

  const bool category = config.ablation.category_embedding && config.ablation.heatmap_init;
  const int nq = static_cast<int>(out.queries.size());
  t.query_in = Matrix(nq, config.query_dim());
  for (int q = 0; q < nq; ++q) {
    const auto& query = out.queries[q];
    const auto row = embed_category(query, t.fused_bev.cell(query.i, query.j), config.num_classes, category);
    std::copy(row.begin(), row.end(), t.query_in.row(q).begin());
  }
  if (nq == 0) {
    out.head_out = Matrix(0, config.num_classes + RegressionTarget::kSize);
    return out;
  }
  t.attended = cross_attention(t.query_in, t.camera_bev, model.attention, training, seed, &t.attention);
  const Matrix fused = fuse(t.attended, t.fused_bev, out.queries, model.attention);
  out.head_out = detection_head_forward(fused, model.head, &t.head);
  return out;
}

struct LossGrads {
  Grid2D heatmap;
  Matrix head_out;
};

LossReport compute_loss(const ForwardOutput& out, const Config& config, const SyntheticScene& scene,
                        LossGrads* g) {
  const int k = config.num_classes;
  const auto geom = BevGeometry::from_grid(config.grid, config.bev_downsample());
  const Grid2D target = gaussian_heatmap_target(scene.gt, geom, k);
  const double l_hm = heatmap_focal_loss(out.heatmap, target, g ? &g->heatmap : nullptr);

  const int nq = static_cast<int>(out.queries.size());
  const auto assignments = assign_targets(out.queries, scene.gt, geom, config.assign_radius);
  Matrix logits(nq, k), cls_targets(nq, k);
  std::vector<double> reg_pred, reg_target;
  std::vector<int> matched_rows;
  for (int q = 0; q < nq; ++q) {
    for (int c = 0; c < k; ++c) logits(q, c) = out.head_out(q, c);
    const auto& a = assignments[q];
    if (a.gt_index < 0) continue;
    cls_targets(q, scene.gt[a.gt_index].class_id) = 1.0;
    matched_rows.push_back(q);
    const auto tgt = a.target.to_array();
    for (int r = 0; r < RegressionTarget::kSize; ++r) {
      reg_pred.push_back(out.head_out(q, k + r));
      reg_target.push_back(tgt[r]);
    }
  }
  Matrix d_logits;
  const double l_q = sigmoid_focal_loss(logits, cls_targets, static_cast<double>(matched_rows.size()),
                                        g ? &d_logits : nullptr);
  double l_reg = 0.0;
  std::vector<double> d_reg;
  if (!reg_pred.empty()) l_reg = smooth_l1(reg_pred, reg_target, g ? &d_reg : nullptr);

  const LossReport report = total_loss(l_hm, l_q, l_reg, config.loss_weight);
  if (g) {
    g->head_out = Matrix(nq, k + RegressionTarget::kSize);
    for (int q = 0; q < nq; ++q)
      for (int c = 0; c < k; ++c) g->head_out(q, c) = d_logits(q, c);
    for (std::size_t m = 0; m < matched_rows.size(); ++m)
      for (int r = 0; r < RegressionTarget::kSize; ++r)
        g->head_out(matched_rows[m], k + r) = config.loss_weight * d_reg[m * RegressionTarget::kSize + r];
  }
  return report;
}

void backward(const Model& model, const Config& config, const ForwardOutput& out, const Tapes& t,
              const LossGrads& lg, Model& grads) {
  const int c_img = config.image_channels;
  Grid2D d_fused = heatmap_head_backward(t.heatmap, model.heatmap, lg.heatmap, grads.heatmap);
  Grid2D d_camera_bev(t.camera_bev.height, t.camera_bev.width, t.camera_bev.channels);

  const int nq = static_cast<int>(out.queries.size());
  if (nq > 0) {
    const Matrix d_fusedq = detection_head_backward(t.head, model.head, lg.head_out, grads.head);
    auto fg = fuse_backward(t.attended, t.fused_bev, out.queries, model.attention, d_fusedq,
                            grads.attention);
    add_inplace(d_fused.data, fg.fused_bev.data);
    auto ag = cross_attention_backward(t.attention, t.camera_bev, model.attention, fg.attended,
                                       grads.attention);
    d_camera_bev = std::move(ag.camera_bev);
    const int cf = t.fused_bev.channels;
    for (int q = 0; q < nq; ++q) {
      auto cell = d_fused.cell(out.queries[q].i, out.queries[q].j);
      const auto row = ag.query_in.row(q);
      for (int c = 0; c < cf; ++c) cell[c] += row[c];
    }
  }

  const bool need_camera = config.ablation.decoration && config.ablation.e2e;
  std::vector<double> d_camera_points;
  if (config.ablation.two_sparse_conv) {
    auto [d_lidar_bev, d_cam_bev] = channel_split(d_fused, d_fused.channels - t.camera_bev.channels);
    add_inplace(d_cam_bev.data, d_camera_bev.data);
    const auto d_lidar_out = with_features(t.lidar_out, bev_flatten_backward(t.lidar_out, d_lidar_bev),
                                           t.lidar_out.channels);
    sparse_stream_backward(t.lidar, model.lidar_stream, d_lidar_out, grads.lidar_stream);
    const auto d_cam_out = with_features(t.camera_out, bev_flatten_backward(t.camera_out, d_cam_bev),
                                         t.camera_out.channels);
    const auto d_cam_in = sparse_stream_backward(t.camera, model.camera_stream, d_cam_out, grads.camera_stream);
    if (need_camera)
      d_camera_points = camera_features_backward(
          t.groups, t.sites.size(), with_features(t.voxels.camera, d_cam_in, c_img));
  } else {
    add_inplace(d_fused.data, d_camera_bev.data);
    const auto d_out = with_features(t.lidar_out, bev_flatten_backward(t.lidar_out, d_fused),
                                     t.lidar_out.channels);
    const auto d_in = sparse_stream_backward(t.lidar, model.lidar_stream, d_out, grads.lidar_stream);
    if (need_camera) {
      const std::size_t n = t.joint_input.size();
      std::vector<double> d_cam(n * c_img);
      for (std::size_t r = 0; r < n; ++r)
        std::copy_n(d_in.begin() + static_cast<std::ptrdiff_t>(r * (4 + c_img) + 4), c_img,
                    d_cam.begin() + static_cast<std::ptrdiff_t>(r * c_img));
      d_camera_points =
          camera_features_backward(t.groups, t.sites.size(), with_features(t.voxels.camera, d_cam, c_img));
    }
  }

  if (need_camera) {
    const Grid2D d_fmap = decorate_backward(t.sites, t.fmap.height, t.fmap.width, c_img, d_camera_points);
    backbone_backward(t.backbone, model.backbone, d_fmap, grads.backbone);
  }
}

}  // namespace

ForwardOutput model_forward(const Model& model, const Config& config, const SyntheticScene& scene,
                            bool training, std::uint64_t dropout_seed) {
  Tapes t;
  return forward(model, config, scene, training, dropout_seed, t);
}

LossReport model_loss_backward(const Model& model, const Config& config, const SyntheticScene& scene,
                               std::uint64_t dropout_seed, Model& grads) {
  Tapes t;
  const ForwardOutput out = forward(model, config, scene, true, dropout_seed, t);
  LossGrads lg;
  const LossReport report = compute_loss(out, config, scene, &lg);
  backward(model, config, out, t, lg, grads);
  return report;
}

LossReport model_loss(const Model& model, const Config& config, const SyntheticScene& scene,
                      bool training, std::uint64_t dropout_seed) {
  Tapes t;
  const ForwardOutput out = forward(model, config, scene, training, dropout_seed, t);
  return compute_loss(out, config, scene, nullptr);
}

std::vector<Detection> decode_detections(const ForwardOutput& out, const Config& config) {
  const int k = config.num_classes;
  const auto geom = BevGeometry::from_grid(config.grid, config.bev_downsample());
  std::vector<Detection> dets;
  dets.reserve(out.queries.size());
  for (std::size_t q = 0; q < out.queries.size(); ++q) {
    const auto& query = out.queries[q];
    const auto row = out.head_out.row(static_cast<int>(q));
    Detection d;
    d.class_id = query.class_id;
    d.score = sigmoid(row[query.class_id]);
    d.box = decode_box(query.i, query.j, RegressionTarget::from_array(row.subspan(k, RegressionTarget::kSize)),
                       geom);
    dets.push_back(d);
  }
  if (config.nms_iou > 0.0) return bev_nms(dets, config.nms_iou);
  return dets;
}

}  // namespace decorfuse
