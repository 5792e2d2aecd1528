#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "decorfuse/config.hpp"
#include "decorfuse/detect_loss.hpp"
#include "decorfuse/image_backbone.hpp"
#include "decorfuse/query_fusion.hpp"
#include "decorfuse/scene.hpp"
#include "decorfuse/sparse_conv.hpp"

namespace decorfuse {

/// Every trainable part of the detector. camera_stream is empty when the
/// two_sparse_conv flag is off (one shared stream on lidar || camera features).
struct Model {
  Backbone2D backbone;
  SparseStream lidar_stream;
  SparseStream camera_stream;
  HeatmapHead heatmap;
  AttentionParams attention;
  DetectionHead head;

  static Model init(const Config& config, Rng& rng);
  Model zeros_like() const;
  /// Fixed traversal order; backbone first.
  void for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn);
  std::size_t parameter_count();
};

using ParamVisitor = std::function<void(const std::string&, std::vector<double>&)>;

struct ForwardOutput {
  Grid2D heatmap;                     // (nx, ny, K) probabilities
  std::vector<ObjectQuery> queries;
  Matrix head_out;                    // per query: K logits then 8 regression values
};

/// Eval mode when training is false (no dropout).
ForwardOutput model_forward(const Model& model, const Config& config, const SyntheticScene& scene,
                            bool training, std::uint64_t dropout_seed);

/// Forward, loss and backward for one scene. Gradients accumulate into grads.
LossReport model_loss_backward(const Model& model, const Config& config,
                               const SyntheticScene& scene, std::uint64_t dropout_seed,
                               Model& grads);
/// Loss only; deterministic for a fixed dropout seed.
LossReport model_loss(const Model& model, const Config& config, const SyntheticScene& scene,
                      bool training, std::uint64_t dropout_seed);

std::vector<Detection> decode_detections(const ForwardOutput& out, const Config& config);

}  // namespace decorfuse
