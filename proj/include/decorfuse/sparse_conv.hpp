#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "decorfuse/tensor.hpp"
#include "decorfuse/voxel.hpp"

namespace decorfuse {

enum class SparseConvMode { submanifold, strided };

inline constexpr int kSparseTaps = 27;

/// 3x3x3 sparse convolution. Tap t = (dx+1)*9 + (dy+1)*3 + (dz+1) with
/// d in {-1,0,1}; weights are laid out [tap][in][out].
///
/// submanifold: out(c) = b + sum_t W[t] in(c + d_t), output sites = input sites.
/// strided:     out(o) = b + sum_t W[t] in(2o + d_t), output sites = every o in
///              the ceil-half grid receiving at least one active input.
struct SparseConvLayer {
  SparseConvMode mode = SparseConvMode::submanifold;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static SparseConvLayer zeros(SparseConvMode mode, int in_channels, int out_channels);
  /// Uniform on [-s, s], s = sqrt(1/(27*in)); zero bias.
  static SparseConvLayer init(SparseConvMode mode, int in_channels, int out_channels, Rng& rng);
  SparseConvLayer zeros_like() const { return zeros(mode, in_channels, out_channels); }
  std::size_t weight_index(int tap, int ci, int co) const {
    return (static_cast<std::size_t>(tap) * in_channels + ci) * out_channels + co;
  }
};

inline std::array<int, 3> tap_offset(int tap) { return {tap / 9 - 1, (tap / 3) % 3 - 1, tap % 3 - 1}; }

/// Input/output index pairs per tap.
struct Rulebook {
  std::array<int, 3> out_dims{};
  std::vector<VoxelCoord> out_coords;
  std::array<std::vector<std::pair<int, int>>, kSparseTaps> pairs;
};

Rulebook build_rulebook(const SparseTensor3D& input, SparseConvMode mode);

SparseTensor3D sparse_conv_forward(const SparseTensor3D& input, const SparseConvLayer& layer,
                                   const Rulebook& rules);
SparseTensor3D sparse_conv_forward(const SparseTensor3D& input, const SparseConvLayer& layer);
/// Throw InvalidConfig when the layer mode does not match.
SparseTensor3D subm_conv_forward(const SparseTensor3D& input, const SparseConvLayer& layer);
SparseTensor3D strided_conv_forward(const SparseTensor3D& input, const SparseConvLayer& layer);

struct SparseConvGrads {
  std::vector<double> input;  // rows aligned with input.coords
  std::vector<double> weight;
  std::vector<double> bias;
};

SparseConvGrads sparse_conv_backward(const SparseTensor3D& input, const SparseConvLayer& layer,
                                     const Rulebook& rules, const SparseTensor3D& output_cotangent);
SparseConvGrads sparse_conv_backward(const SparseTensor3D& input, const SparseConvLayer& layer,
                                     const SparseTensor3D& output_cotangent);

SparseTensor3D sparse_relu(const SparseTensor3D& x);

/// Dense (Nx, Ny, Nz*C) map: cell (i,j) channel block k*C..(k+1)*C holds voxel (i,j,k).
Grid2D bev_flatten(const SparseTensor3D& st);
/// Cotangent rows aligned with st.coords.
std::vector<double> bev_flatten_backward(const SparseTensor3D& st, const Grid2D& bev_cotangent);

/// Lidar block first. Throws SpatialMismatch on differing X, Y.
Grid2D channel_concat(const Grid2D& first, const Grid2D& second);
std::pair<Grid2D, Grid2D> channel_split(const Grid2D& joined, int first_channels);

/// subm -> ReLU -> strided -> ReLU -> ... with a configurable channel schedule.
/// Default schedule {16, 32, 32, 64} with modes {subm, strided, subm, strided}.
struct SparseStream {
  std::vector<SparseConvLayer> layers;

  static SparseStream init(int in_channels, const std::vector<int>& schedule, Rng& rng);
  SparseStream zeros_like() const;
  void for_each_param(const std::string& prefix,
                      const std::function<void(const std::string&, std::vector<double>&)>& fn);
};

struct SparseStreamTape {
  std::vector<SparseTensor3D> inputs;  // input to each layer
  std::vector<SparseTensor3D> pre;     // pre-activation output of each layer
  std::vector<Rulebook> rules;
};

SparseTensor3D sparse_stream_forward(const SparseTensor3D& input, const SparseStream& stream,
                                     SparseStreamTape* tape = nullptr);
/// Returns the cotangent for the stream input; accumulates parameter grads.
std::vector<double> sparse_stream_backward(const SparseStreamTape& tape, const SparseStream& stream,
                                           const SparseTensor3D& output_cotangent,
                                           SparseStream& grads);

}  // namespace decorfuse
