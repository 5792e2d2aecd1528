#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "decorfuse/voxel.hpp"

namespace decorfuse {

/// Structural switches for the ablation variants.
struct AblationFlags {
  bool decoration = true;          // attach image features to points
  bool e2e = true;                 // train the 2D backbone jointly
  bool two_sparse_conv = true;     // separate lidar/camera sparse streams
  bool heatmap_init = true;        // local-max heatmap query selection
  bool category_embedding = true;  // one-hot class appended to queries

  bool operator==(const AblationFlags&) const = default;
};

/// Synthetic scene generation parameters.
struct SceneConfig {
  int min_objects = 2;
  int max_objects = 4;
  int clutter_points = 200;
  int surface_points = 60;
  double ground_z = -1.6;
  double focal = 40.0;        // pixels
  double min_center_gap = 5.0;  // meters between object centers
  double max_abs_yaw = 1.0471975511965976;  // pi/3

  bool operator==(const SceneConfig&) const = default;
};

/// Every tunable of the pipeline. Serialized as a flat JSON object; unknown
/// keys are rejected.
struct Config {
  std::string grid_name = "desk";  // "custom" when grid was given explicitly
  VoxelGridSpec grid = VoxelGridSpec::desk();
  std::uint64_t seed = 7;

  int epochs = 60;
  double lr_max = 2e-3;
  double weight_decay = 0.01;
  double beta1_low = 0.85;
  double beta1_high = 0.95;
  double beta2 = 0.99;
  int fade_epochs = 5;
  double loss_weight = 2.0;
  AblationFlags ablation;

  int num_classes = 2;
  int image_channels = 64;
  int image_height = 64;
  int image_width = 96;
  std::vector<int> stream_channels = {16, 32, 32, 64};
  int heatmap_hidden = 64;
  int queries_per_class = 8;
  int d_model = 32;
  int fc_units = 192;
  double dropout_rate = 0.3;
  int head_hidden = 64;
  double assign_radius = 2.0;
  std::size_t max_points_per_voxel = 0;
  double nms_iou = 0.0;  // <= 0 disables NMS at inference
  int paste_per_scene = 3;
  SceneConfig scene;

  /// Throws InvalidConfig on inconsistent values.
  void validate() const;

  /// Stride of the BEV map relative to the voxel grid (2 per strided layer).
  int bev_downsample() const;
  /// Height levels left after striding.
  int bev_depth() const;
  int stream_out_channels() const { return stream_channels.empty() ? 0 : stream_channels.back(); }
  /// Channels of one stream's BEV map.
  int stream_bev_channels() const;
  int fused_bev_channels() const;
  int camera_bev_channels() const;
  int query_dim() const;

  /// Applies "flag=on|off" for one of the ablation switches.
  void apply_ablation(std::string_view assignment);
  void set_grid(const std::string& preset);
};

Config config_from_json(std::string_view text);
std::string config_to_json(const Config& config);
/// FNV-1a over the canonical JSON form.
std::uint64_t config_hash(const Config& config);

}  // namespace decorfuse
