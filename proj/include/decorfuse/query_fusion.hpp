#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "decorfuse/image_backbone.hpp"
#include "decorfuse/tensor.hpp"

namespace decorfuse {

/// Fully connected layer y = x W + b, W laid out [in][out].
struct Dense {
  int in_features = 0;
  int out_features = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static Dense zeros(int in_features, int out_features);
  /// Uniform on [-s, s], s = sqrt(1/in); zero bias.
  static Dense init(int in_features, int out_features, Rng& rng);
  Dense zeros_like() const { return zeros(in_features, out_features); }
};

Matrix dense_forward(const Matrix& x, const Dense& layer);
/// Returns the input cotangent; accumulates into grads.
Matrix dense_backward(const Matrix& x, const Dense& layer, const Matrix& cotangent, Dense& grads);

double sigmoid(double z);

/// 3x3 conv (C -> hidden) -> ReLU -> 1x1 conv (hidden -> K) -> sigmoid.
struct HeatmapHead {
  Conv2DLayer conv1;
  Conv2DLayer conv2;

  static HeatmapHead init(int in_channels, int hidden, int num_classes, Rng& rng);
  HeatmapHead zeros_like() const { return {conv1.zeros_like(), conv2.zeros_like()}; }
  int num_classes() const { return conv2.out_channels; }
};

struct HeatmapTape {
  Grid2D input, pre1, act1, probs;
};

/// Per-cell class probabilities in (0,1), shape (X, Y, K).
Grid2D heatmap_head_forward(const Grid2D& bev, const HeatmapHead& head, HeatmapTape* tape = nullptr);
/// Cotangent w.r.t. the probabilities in, BEV cotangent out.
Grid2D heatmap_head_backward(const HeatmapTape& tape, const HeatmapHead& head,
                             const Grid2D& prob_cotangent, HeatmapHead& grads);

struct ObjectQuery {
  int i = 0;
  int j = 0;
  int class_id = 0;
  double score = 0.0;

  bool operator==(const ObjectQuery&) const = default;
};

/// Cells whose value is >= each existing 8-neighbour in the same class slice,
/// best n per class by value (ties: row-major ascending). Classes ascending.
std::vector<ObjectQuery> select_queries(const Grid2D& heatmap, int per_class);

/// Heatmap-initialisation ablation: the best `total` cells by their maximum
/// class score, no local-maximum rule; class_id is the argmax class.
std::vector<ObjectQuery> select_queries_topk(const Grid2D& heatmap, int total);

/// cell_feature || one_hot(class_id, K) when enabled, else cell_feature.
/// Throws BadClass for class_id outside [0, K).
std::vector<double> embed_category(const ObjectQuery& q, std::span<const double> cell_feature,
                                   int num_classes, bool enabled = true);

struct AttentionParams {
  int d_model = 32;
  Matrix w_q;  // query_dim x d_model
  Matrix w_k;  // camera_channels x d_model
  Matrix w_v;  // camera_channels x d_model
  Dense fc;    // d_model -> fc_units
  double dropout_rate = 0.3;

  static AttentionParams init(int query_dim, int camera_channels, int d_model, int fc_units,
                              double dropout_rate, Rng& rng);
  AttentionParams zeros_like() const;
  void for_each_param(const std::function<void(const std::string&, std::vector<double>&)>& fn);
};

struct AttentionTape {
  Matrix query_in, key_in;
  Matrix q, k, v;
  Matrix attn;       // softmax rows
  Matrix attn_used;  // after dropout (== attn in eval mode)
  bool training = false;
  std::uint64_t seed = 0;
};

/// Inverted-dropout keep decision for attention weight (query, key).
bool attention_keep(std::uint64_t seed, int query, int key, double rate);

/// Single-head scaled dot-product attention of queries over camera BEV cells.
/// Output has one d_model row per query. Throws EmptyKeySet when the map has no cells.
Matrix cross_attention(const Matrix& query_in, const Grid2D& camera_bev,
                       const AttentionParams& params, bool training, std::uint64_t seed,
                       AttentionTape* tape = nullptr);

struct AttentionGrads {
  Matrix query_in;
  Grid2D camera_bev;
};

AttentionGrads cross_attention_backward(const AttentionTape& tape, const Grid2D& camera_bev,
                                        const AttentionParams& params, const Matrix& cotangent,
                                        AttentionParams& grads);

/// Per query: fc(attended) || fused_bev[cell].
Matrix fuse(const Matrix& attended, const Grid2D& fused_bev, std::span<const ObjectQuery> queries,
            const AttentionParams& params);

struct FuseGrads {
  Matrix attended;
  Grid2D fused_bev;
};

FuseGrads fuse_backward(const Matrix& attended, const Grid2D& fused_bev,
                        std::span<const ObjectQuery> queries, const AttentionParams& params,
                        const Matrix& cotangent, AttentionParams& grads);

}  // namespace decorfuse
